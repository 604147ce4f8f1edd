// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hbgl {

using LabelId = int;

/// Sorted, duplicate-free list of label ids.
using LabelSet = std::vector<LabelId>;

/// Sorts and deduplicates `ids` in place and returns the result.
LabelSet normalize(LabelSet ids);

/// The label taxonomy: a DAG over labels 0..L-1 with names and levels.
///
/// Ids follow file order. Roots have level 1 and every other label sits one
/// level below its deepest parent, so every edge points strictly downward.
/// Instances are immutable once built.
class LabelHierarchy {
public:
    /// Validates and builds a hierarchy. `parents[i]` lists the parent ids of
    /// label i. Throws ValidationError on empty input, bad ids, duplicate or
    /// empty names, and cycles.
    static LabelHierarchy build(std::vector<std::string> names,
                                std::vector<std::vector<LabelId>> parents);

    std::size_t size() const { return names_.size(); }
    int max_level() const { return max_level_; }

    const std::string& name(LabelId id) const;
    int level(LabelId id) const;
    std::span<const LabelId> parents(LabelId id) const;
    std::span<const LabelId> children(LabelId id) const;
    bool is_leaf(LabelId id) const { return children(id).empty(); }
    bool contains(LabelId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }

    std::optional<LabelId> find(std::string_view name) const;
    /// Like find() but throws ValidationError naming the missing label.
    LabelId id_of(std::string_view name) const;

    /// Labels at level `h` (1-based), ascending id order.
    const std::vector<LabelId>& labels_at_level(int h) const;

    /// Serializes to the taxonomy JSON schema, labels in id order.
    std::string to_json() const;

    bool operator==(const LabelHierarchy& other) const {
        return names_ == other.names_ && parents_ == other.parents_;
    }

private:
    LabelHierarchy() = default;
    void check(LabelId id) const;

    std::vector<std::string> names_;
    std::vector<std::vector<LabelId>> parents_;
    std::vector<std::vector<LabelId>> children_;
    std::vector<int> level_;
    std::vector<std::vector<LabelId>> by_level_;
    int max_level_ = 0;
};

/// Parses taxonomy JSON: {"labels": [{"name": ..., "parents": [...]}, ...]}.
/// Malformed JSON raises ParseError carrying the byte offset.
LabelHierarchy load_taxonomy(std::string_view json_text);
LabelHierarchy load_taxonomy(std::istream& in);

/// Per-level partition of one sample's target labels.
struct LocalHierarchy {
    /// levels[h-1] holds the targets at level h.
    std::vector<LabelSet> levels;

    std::size_t depth() const { return levels.size(); }
    LabelSet all() const;
};

LocalHierarchy local_hierarchy_of(const LabelHierarchy& h, std::span<const LabelId> targets);

/// True iff a != b, both are leaves, and they share at least one parent.
bool sibling_leaves(const LabelHierarchy& h, LabelId a, LabelId b);

/// True iff every parent of every label in `labels` is also in `labels`.
bool is_upward_closed(const LabelHierarchy& h, std::span<const LabelId> labels);

}  // namespace hbgl
