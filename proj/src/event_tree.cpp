#include "stoclock/event_tree.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace stoclock {

using nlohmann::json;

UtilityField UtilitySpec::make() const {
    if (family == "log") return UtilityField::log(beta);
    if (family == "power") return UtilityField::power(gamma, beta);
    throw TreeFormatError("utility.family must be \"log\" or \"power\", got \"" + family + "\"");
}

EventTree::EventTree(const std::vector<NodeInput>& nodes) {
    if (nodes.empty()) throw TreeFormatError("tree has no nodes");
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (!index.emplace(nodes[i].id, i).second)
            throw TreeFormatError("duplicate node id '" + nodes[i].id + "'");

    std::vector<std::vector<std::size_t>> kids(nodes.size());
    std::optional<std::size_t> root;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i].parent) {
            if (root) throw TreeFormatError("more than one root ('" + nodes[*root].id + "', '" + nodes[i].id + "')");
            root = i;
            continue;
        }
        const auto it = index.find(*nodes[i].parent);
        if (it == index.end())
            throw TreeFormatError("node '" + nodes[i].id + "' has unknown parent '" + *nodes[i].parent + "'");
        kids[it->second].push_back(i);
    }
    if (!root) throw TreeFormatError("tree has no root");

    assets_ = nodes[*root].price.size();
    if (assets_ == 0) throw TreeFormatError("root has no prices");

    // Preorder walk; input order of siblings is preserved.
    std::vector<std::size_t> order;
    std::vector<std::size_t> new_index(nodes.size(), SIZE_MAX);
    std::vector<std::size_t> stack{*root};
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        if (new_index[i] != SIZE_MAX) throw TreeFormatError("cycle through node '" + nodes[i].id + "'");
        new_index[i] = order.size();
        order.push_back(i);
        for (auto it = kids[i].rbegin(); it != kids[i].rend(); ++it) stack.push_back(*it);
    }
    if (order.size() != nodes.size())
        throw TreeFormatError("tree is not connected: " + std::to_string(nodes.size() - order.size()) +
                              " node(s) unreachable from the root");

    const std::size_t n = nodes.size();
    id_.resize(n);
    parent_.assign(n, -1);
    children_.assign(n, {});
    prob_.resize(n);
    path_prob_.resize(n);
    dkappa_.resize(n);
    endow_.resize(n);
    time_.resize(n);
    price_.resize(n);
    depth_.assign(n, 0);
    leaf_begin_.resize(n);
    leaf_end_.resize(n);

    for (std::size_t k = 0; k < n; ++k) {
        const NodeInput& in = nodes[order[k]];
        id_[k] = in.id;
        if (in.parent) parent_[k] = static_cast<int>(new_index[index.at(*in.parent)]);
        for (std::size_t c : kids[order[k]]) children_[k].push_back(new_index[c]);
        prob_[k] = in.parent ? in.prob : 1.0;
        price_[k] = in.price;
        dkappa_[k] = in.dkappa;
        endow_[k] = in.endow;
        const std::string where = "node '" + in.id + "': ";
        if (price_[k].size() != assets_)
            throw TreeFormatError(where + "price has " + std::to_string(price_[k].size()) +
                                  " entries, expected " + std::to_string(assets_));
        for (double s : price_[k])
            if (!std::isfinite(s)) throw TreeFormatError(where + "price must be finite");
        if (in.parent && !(in.prob > 0.0 && in.prob <= 1.0))
            throw TreeFormatError(where + "prob must lie in (0, 1]");
        if (!(in.dkappa >= 0.0) || !std::isfinite(in.dkappa))
            throw TreeFormatError(where + "dkappa must be >= 0");
        if (!(in.endow >= 0.0) || !std::isfinite(in.endow))
            throw TreeFormatError(where + "endow must be >= 0");
    }

    std::vector<double> kappa_sum(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const int p = parent_[k];
        depth_[k] = p < 0 ? 0 : depth_[static_cast<std::size_t>(p)] + 1;
        path_prob_[k] = p < 0 ? 1.0 : path_prob_[static_cast<std::size_t>(p)] * prob_[k];
        kappa_sum[k] = (p < 0 ? 0.0 : kappa_sum[static_cast<std::size_t>(p)]) + dkappa_[k];
        const NodeInput& in = nodes[order[k]];
        time_[k] = in.time ? *in.time : static_cast<double>(depth_[k]);
        if (p >= 0 && !(time_[k] > time_[static_cast<std::size_t>(p)]))
            throw TreeFormatError("node '" + id_[k] + "': time must exceed its parent's time");
        if (children_[k].empty()) {
            leaves_.push_back(k);
            if (std::abs(kappa_sum[k] - 1.0) > kTolerance) {
                std::ostringstream os;
                os.precision(17);
                os << "clock increments along the path to leaf '" << id_[k] << "' sum to "
                   << kappa_sum[k] << ", expected 1";
                throw TreeFormatError(os.str());
            }
        }
    }
    // Leaf ranges, children after parents in preorder so walk backwards.
    for (std::size_t k = n; k-- > 0;) {
        if (children_[k].empty()) {
            const auto pos = static_cast<std::size_t>(
                std::find(leaves_.begin(), leaves_.end(), k) - leaves_.begin());
            leaf_begin_[k] = pos;
            leaf_end_[k] = pos + 1;
        } else {
            leaf_begin_[k] = leaf_begin_[children_[k].front()];
            leaf_end_[k] = leaf_end_[children_[k].back()];
            double total = 0.0;
            for (std::size_t c : children_[k]) total += prob_[c];
            if (std::abs(total - 1.0) > kTolerance) {
                std::ostringstream os;
                os.precision(17);
                os << "branch probabilities below node '" << id_[k] << "' sum to " << total;
                throw TreeFormatError(os.str());
            }
        }
    }
}

std::vector<std::size_t> EventTree::path_to(std::size_t n) const {
    std::vector<std::size_t> path;
    for (int k = static_cast<int>(n); k >= 0; k = parent_[static_cast<std::size_t>(k)])
        path.push_back(static_cast<std::size_t>(k));
    std::reverse(path.begin(), path.end());
    return path;
}

std::vector<std::size_t> EventTree::nonleaf_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t n = 0; n < size(); ++n)
        if (!is_leaf(n)) out.push_back(n);
    return out;
}

double EventTree::node_mass(std::size_t n, const std::vector<double>& q) const {
    double m = 0.0;
    for (std::size_t l = leaf_begin_[n]; l < leaf_end_[n]; ++l) m += q[l];
    return m;
}

namespace {

std::string id_string(const json& j, const std::string& where) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer()) return std::to_string(j.get<long long>());
    throw TreeFormatError(where + ": id must be a string or integer");
}

double number(const json& node, const char* key, const std::string& where, bool required,
              double fallback) {
    const auto it = node.find(key);
    if (it == node.end()) {
        if (required) throw TreeFormatError(where + ": missing \"" + key + "\"");
        return fallback;
    }
    if (!it->is_number()) throw TreeFormatError(where + ": \"" + key + "\" must be a number");
    return it->get<double>();
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw TreeFormatError(where + ": unknown key \"" + key + "\"");
    }
}

}  // namespace

EventTree parse_tree(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // Recover line and column from the byte offset.
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw TreeFormatError("tree JSON syntax error at line " + std::to_string(line) + ", column " +
                                  std::to_string(col) + ": " + e.what(),
                              line, col);
    }
    if (!doc.is_object()) throw TreeFormatError("tree document must be a JSON object");
    reject_unknown(doc, {"nodes", "utility", "name", "description"}, "tree");
    const auto nodes_it = doc.find("nodes");
    if (nodes_it == doc.end() || !nodes_it->is_array())
        throw TreeFormatError("tree: \"nodes\" must be an array");

    std::vector<NodeInput> nodes;
    std::size_t k = 0;
    for (const json& jn : *nodes_it) {
        const std::string where = "nodes[" + std::to_string(k++) + "]";
        if (!jn.is_object()) throw TreeFormatError(where + " must be an object");
        reject_unknown(jn, {"id", "parent", "prob", "price", "dkappa", "endow", "time"}, where);
        NodeInput in;
        if (!jn.contains("id")) throw TreeFormatError(where + ": missing \"id\"");
        in.id = id_string(jn["id"], where);
        if (jn.contains("parent") && !jn["parent"].is_null()) in.parent = id_string(jn["parent"], where);
        in.prob = number(jn, "prob", where, in.parent.has_value(), 1.0);
        const auto pit = jn.find("price");
        if (pit == jn.end()) throw TreeFormatError(where + ": missing \"price\"");
        if (pit->is_number()) {
            in.price = {pit->get<double>()};
        } else if (pit->is_array()) {
            for (const json& v : *pit) {
                if (!v.is_number()) throw TreeFormatError(where + ": price entries must be numbers");
                in.price.push_back(v.get<double>());
            }
        } else {
            throw TreeFormatError(where + ": \"price\" must be a number or an array");
        }
        in.dkappa = number(jn, "dkappa", where, false, 0.0);
        in.endow = number(jn, "endow", where, false, 0.0);
        if (jn.contains("time")) in.time = number(jn, "time", where, true, 0.0);
        nodes.push_back(std::move(in));
    }
    EventTree tree(nodes);
    if (const auto uit = doc.find("utility"); uit != doc.end()) {
        if (!uit->is_object()) throw TreeFormatError("tree: \"utility\" must be an object");
        reject_unknown(*uit, {"family", "gamma", "beta"}, "utility");
        UtilitySpec spec;
        if (uit->contains("family")) {
            if (!(*uit)["family"].is_string()) throw TreeFormatError("utility.family must be a string");
            spec.family = (*uit)["family"].get<std::string>();
        }
        spec.gamma = number(*uit, "gamma", "utility", false, spec.gamma);
        spec.beta = number(*uit, "beta", "utility", false, spec.beta);
        try {
            (void)spec.make();
        } catch (const std::invalid_argument& e) {
            throw TreeFormatError(std::string("utility: ") + e.what());
        }
        tree.utility = spec;
    }
    return tree;
}

EventTree load_tree(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TreeFormatError("cannot open tree file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_tree(ss.str());
}

}  // namespace stoclock
