// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hbgl/hierarchy.hpp"

#include <string>
#include <vector>

namespace hbgl {

struct LabelCounts {
    long tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Which labels the macro average runs over.
enum class MacroMode { kAllLabels, kObservedOnly };

struct F1Report {
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    std::vector<LabelCounts> per_label;     // indexed by label id
    std::vector<double> per_level_micro;    // [h-1] -> micro F1 over level-h labels
    MacroMode macro_mode = MacroMode::kAllLabels;

    std::string to_json(const LabelHierarchy& h) const;
};

/// F1 from pooled counts; 0/0 is 0.
double f1_from_counts(long tp, long fp, long fn);

/// Throws ShapeError on length mismatch and IndexError on unknown ids.
/// kObservedOnly averages over labels present in gold or predictions.
F1Report f1_report(const std::vector<LabelSet>& pred, const std::vector<LabelSet>& gold, const LabelHierarchy& h,
                   MacroMode mode = MacroMode::kAllLabels);

}  // namespace hbgl
