// SPDX-License-Identifier: Apache-2.0
#include "hbgl/hierarchy.hpp"

#include "hbgl/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <iterator>
#include <queue>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace hbgl {

using json = nlohmann::json;

LabelSet normalize(LabelSet ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

namespace {

// Returns the labels of one directed cycle, or an empty vector if none exists.
std::vector<LabelId> find_cycle(const std::vector<std::vector<LabelId>>& children) {
    const std::size_t n = children.size();
    enum Color : unsigned char { kWhite, kGray, kBlack };
    std::vector<Color> color(n, kWhite);
    std::vector<LabelId> stack;
    std::vector<std::size_t> cursor(n, 0);

    for (std::size_t root = 0; root < n; ++root) {
        if (color[root] != kWhite) continue;
        stack.push_back(static_cast<LabelId>(root));
        color[root] = kGray;
        while (!stack.empty()) {
            const LabelId v = stack.back();
            if (cursor[v] < children[v].size()) {
                const LabelId c = children[v][cursor[v]++];
                if (color[c] == kGray) {
                    auto it = std::find(stack.begin(), stack.end(), c);
                    return {it, stack.end()};
                }
                if (color[c] == kWhite) {
                    color[c] = kGray;
                    stack.push_back(c);
                }
            } else {
                color[v] = kBlack;
                stack.pop_back();
            }
        }
    }
    return {};
}

}  // namespace

LabelHierarchy LabelHierarchy::build(std::vector<std::string> names,
                                     std::vector<std::vector<LabelId>> parents) {
    if (names.empty()) throw ValidationError("empty taxonomy");
    if (names.size() != parents.size())
        throw ValidationError("names and parent lists differ in length");

    const std::size_t n = names.size();
    std::unordered_set<std::string> seen;
    for (const auto& name : names) {
        if (name.empty()) throw ValidationError("label name must be non-empty");
        if (!seen.insert(name).second) throw ValidationError("duplicate label name '" + name + "'");
    }

    LabelHierarchy h;
    h.names_ = std::move(names);
    h.parents_.resize(n);
    h.children_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (LabelId p : parents[i]) {
            if (p < 0 || static_cast<std::size_t>(p) >= n)
                throw ValidationError("label '" + h.names_[i] + "' has out-of-range parent id " +
                                      std::to_string(p));
        }
        h.parents_[i] = normalize(std::move(parents[i]));
        for (LabelId p : h.parents_[i]) h.children_[p].push_back(static_cast<LabelId>(i));
    }

    if (auto cycle = find_cycle(h.children_); !cycle.empty()) {
        std::ostringstream msg;
        msg << "cycle detected through label '" << h.names_[cycle.front()] << "' (";
        for (std::size_t k = 0; k < cycle.size(); ++k) msg << h.names_[cycle[k]] << " -> ";
        msg << h.names_[cycle.front()] << ")";
        throw ValidationError(msg.str());
    }

    // Longest-path levels in topological order.
    std::vector<int> indegree(n);
    for (std::size_t i = 0; i < n; ++i) indegree[i] = static_cast<int>(h.parents_[i].size());
    std::queue<LabelId> ready;
    h.level_.assign(n, 1);
    for (std::size_t i = 0; i < n; ++i)
        if (indegree[i] == 0) ready.push(static_cast<LabelId>(i));
    while (!ready.empty()) {
        const LabelId v = ready.front();
        ready.pop();
        for (LabelId c : h.children_[v]) {
            h.level_[c] = std::max(h.level_[c], h.level_[v] + 1);
            if (--indegree[c] == 0) ready.push(c);
        }
    }

    h.max_level_ = *std::max_element(h.level_.begin(), h.level_.end());
    h.by_level_.assign(h.max_level_, {});
    for (std::size_t i = 0; i < n; ++i) h.by_level_[h.level_[i] - 1].push_back(static_cast<LabelId>(i));
    return h;
}

void LabelHierarchy::check(LabelId id) const {
    if (!contains(id)) throw IndexError("unknown label id " + std::to_string(id));
}

const std::string& LabelHierarchy::name(LabelId id) const {
    check(id);
    return names_[id];
}

int LabelHierarchy::level(LabelId id) const {
    check(id);
    return level_[id];
}

std::span<const LabelId> LabelHierarchy::parents(LabelId id) const {
    check(id);
    return parents_[id];
}

std::span<const LabelId> LabelHierarchy::children(LabelId id) const {
    check(id);
    return children_[id];
}

std::optional<LabelId> LabelHierarchy::find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return static_cast<LabelId>(i);
    return std::nullopt;
}

LabelId LabelHierarchy::id_of(std::string_view name) const {
    if (auto id = find(name)) return *id;
    throw ValidationError("unknown label '" + std::string(name) + "'");
}

const std::vector<LabelId>& LabelHierarchy::labels_at_level(int h) const {
    if (h < 1 || h > max_level_) throw IndexError("level " + std::to_string(h) + " out of range");
    return by_level_[h - 1];
}

std::string LabelHierarchy::to_json() const {
    json labels = json::array();
    for (std::size_t i = 0; i < names_.size(); ++i) {
        json parents = json::array();
        for (LabelId p : parents_[i]) parents.push_back(names_[p]);
        labels.push_back({{"name", names_[i]}, {"parents", parents}});
    }
    return json{{"labels", labels}}.dump(2);
}

LabelHierarchy load_taxonomy(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text.begin(), json_text.end());
    } catch (const json::parse_error& e) {
        throw ParseError("malformed taxonomy JSON at byte " + std::to_string(e.byte) + ": " + e.what(),
                         e.byte);
    }
    if (!doc.is_object() || !doc.contains("labels") || !doc["labels"].is_array())
        throw ValidationError("taxonomy must be an object with a \"labels\" array");

    const auto& entries = doc["labels"];
    std::vector<std::string> names;
    std::unordered_map<std::string, LabelId> index;
    for (const auto& entry : entries) {
        if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string())
            throw ValidationError("every label needs a string \"name\"");
        names.push_back(entry["name"].get<std::string>());
        index.emplace(names.back(), static_cast<LabelId>(names.size() - 1));
    }

    std::vector<std::vector<LabelId>> parents(names.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& entry = entries[i];
        if (!entry.contains("parents")) continue;
        if (!entry["parents"].is_array())
            throw ValidationError("\"parents\" of '" + names[i] + "' must be an array");
        for (const auto& p : entry["parents"]) {
            if (!p.is_string()) throw ValidationError("parent references must be label names");
            auto it = index.find(p.get<std::string>());
            if (it == index.end())
                throw ValidationError("label '" + names[i] + "' references unknown parent '" +
                                      p.get<std::string>() + "'");
            parents[i].push_back(it->second);
        }
    }
    return LabelHierarchy::build(std::move(names), std::move(parents));
}

LabelHierarchy load_taxonomy(std::istream& in) {
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return load_taxonomy(std::string_view(text));
}

LabelSet LocalHierarchy::all() const {
    LabelSet out;
    for (const auto& level : levels) out.insert(out.end(), level.begin(), level.end());
    return normalize(std::move(out));
}

LocalHierarchy local_hierarchy_of(const LabelHierarchy& h, std::span<const LabelId> targets) {
    LocalHierarchy lh;
    lh.levels.assign(h.max_level(), {});
    for (LabelId id : targets) {
        if (!h.contains(id)) throw IndexError("unknown label id " + std::to_string(id));
        lh.levels[h.level(id) - 1].push_back(id);
    }
    for (auto& level : lh.levels) level = normalize(std::move(level));
    return lh;
}

bool sibling_leaves(const LabelHierarchy& h, LabelId a, LabelId b) {
    if (a == b || !h.is_leaf(a) || !h.is_leaf(b)) return false;
    auto pa = h.parents(a);
    auto pb = h.parents(b);
    // Both parent lists are sorted.
    auto ia = pa.begin();
    auto ib = pb.begin();
    while (ia != pa.end() && ib != pb.end()) {
        if (*ia == *ib) return true;
        if (*ia < *ib) ++ia;
        else ++ib;
    }
    return false;
}

bool is_upward_closed(const LabelHierarchy& h, std::span<const LabelId> labels) {
    std::unordered_set<LabelId> present(labels.begin(), labels.end());
    for (LabelId id : labels)
        for (LabelId p : h.parents(id))
            if (!present.contains(p)) return false;
    return true;
}

}  // namespace hbgl
