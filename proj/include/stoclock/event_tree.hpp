#pragma once

// Finite discrete-time market on an event tree: branch probabilities, asset
// prices, clock increments and endowment density per node.

#include "stoclock/utility.hpp"

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace stoclock {

/// Malformed or invalid tree input. line/column are 0 when not applicable.
class TreeFormatError : public std::runtime_error {
public:
    TreeFormatError(const std::string& what, std::size_t line = 0, std::size_t column = 0)
        : std::runtime_error(what), line_(line), column_(column) {}
    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

struct NodeInput {
    std::string id;
    std::optional<std::string> parent;  // nullopt for the root
    double prob = 1.0;                  // conditional on the parent
    std::vector<double> price;
    double dkappa = 0.0;
    double endow = 0.0;
    std::optional<double> time;         // defaults to depth
};

struct UtilitySpec {
    std::string family = "log";
    double gamma = 0.5;
    double beta = 0.0;
    UtilityField make() const;
};

/// Nodes are stored in depth-first preorder, so the leaves below any node
/// occupy the contiguous leaf index range [leaf_begin, leaf_end).
class EventTree {
public:
    static constexpr double kTolerance = 1e-12;

    explicit EventTree(const std::vector<NodeInput>& nodes);

    std::size_t size() const { return id_.size(); }
    std::size_t assets() const { return assets_; }
    std::size_t leaf_count() const { return leaves_.size(); }

    const std::string& id(std::size_t n) const { return id_[n]; }
    int parent(std::size_t n) const { return parent_[n]; }
    const std::vector<std::size_t>& children(std::size_t n) const { return children_[n]; }
    bool is_leaf(std::size_t n) const { return children_[n].empty(); }
    double prob(std::size_t n) const { return prob_[n]; }
    /// Unconditional probability P(n).
    double path_prob(std::size_t n) const { return path_prob_[n]; }
    const std::vector<double>& price(std::size_t n) const { return price_[n]; }
    double dkappa(std::size_t n) const { return dkappa_[n]; }
    double endow(std::size_t n) const { return endow_[n]; }
    double time(std::size_t n) const { return time_[n]; }
    std::size_t depth(std::size_t n) const { return depth_[n]; }
    std::size_t leaf_begin(std::size_t n) const { return leaf_begin_[n]; }
    std::size_t leaf_end(std::size_t n) const { return leaf_end_[n]; }
    /// Node index of the i-th leaf.
    std::size_t leaf_node(std::size_t i) const { return leaves_[i]; }
    /// Node indices from the root to n inclusive.
    std::vector<std::size_t> path_to(std::size_t n) const;
    std::vector<std::size_t> nonleaf_nodes() const;

    /// Mass of the leaf weight vector q below n.
    double node_mass(std::size_t n, const std::vector<double>& q) const;

    std::optional<UtilitySpec> utility;

private:
    std::vector<std::string> id_;
    std::vector<int> parent_;
    std::vector<std::vector<std::size_t>> children_;
    std::vector<double> prob_, path_prob_, dkappa_, endow_, time_;
    std::vector<std::vector<double>> price_;
    std::vector<std::size_t> depth_, leaf_begin_, leaf_end_, leaves_;
    std::size_t assets_ = 0;
};

/// Parses the JSON tree format
///   {"nodes":[{"id","parent","prob","price":[...],"dkappa","endow","time"?}],
///    "utility":{"family","gamma","beta"}}
/// Throws TreeFormatError with line and column for syntax errors.
EventTree parse_tree(const std::string& text);
EventTree load_tree(const std::string& path);

}  // namespace stoclock
