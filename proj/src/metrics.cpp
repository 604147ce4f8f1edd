// SPDX-License-Identifier: Apache-2.0
#include "hbgl/metrics.hpp"

#include "hbgl/errors.hpp"

#include "json.hpp"

#include <algorithm>

namespace hbgl {

double f1_from_counts(long tp, long fp, long fn) {
    const long denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

F1Report f1_report(const std::vector<LabelSet>& pred, const std::vector<LabelSet>& gold, const LabelHierarchy& h,
                   MacroMode mode) {
    if (pred.size() != gold.size())
        throw ShapeError(std::to_string(pred.size()) + " predictions for " + std::to_string(gold.size()) +
                         " gold label sets");
    F1Report r;
    r.macro_mode = mode;
    r.per_label.assign(h.size(), {});
    auto check = [&](LabelId id) {
        if (!h.contains(id)) throw IndexError("unknown label id " + std::to_string(id));
    };
    for (std::size_t n = 0; n < pred.size(); ++n) {
        const LabelSet p = normalize(pred[n]);
        const LabelSet g = normalize(gold[n]);
        for (LabelId id : p) {
            check(id);
            (std::binary_search(g.begin(), g.end(), id) ? r.per_label[id].tp : r.per_label[id].fp)++;
        }
        for (LabelId id : g) {
            check(id);
            if (!std::binary_search(p.begin(), p.end(), id)) r.per_label[id].fn++;
        }
    }

    long tp = 0, fp = 0, fn = 0;
    double macro_sum = 0.0;
    std::size_t macro_n = 0;
    for (auto& c : r.per_label) {
        c.precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
        c.recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
        c.f1 = f1_from_counts(c.tp, c.fp, c.fn);
        tp += c.tp;
        fp += c.fp;
        fn += c.fn;
        if (mode == MacroMode::kAllLabels || c.tp + c.fp + c.fn > 0) {
            macro_sum += c.f1;
            ++macro_n;
        }
    }
    r.micro_f1 = f1_from_counts(tp, fp, fn);
    r.macro_f1 = macro_n == 0 ? 0.0 : macro_sum / static_cast<double>(macro_n);

    for (int lvl = 1; lvl <= h.max_level(); ++lvl) {
        long ltp = 0, lfp = 0, lfn = 0;
        for (LabelId id : h.labels_at_level(lvl)) {
            ltp += r.per_label[id].tp;
            lfp += r.per_label[id].fp;
            lfn += r.per_label[id].fn;
        }
        r.per_level_micro.push_back(f1_from_counts(ltp, lfp, lfn));
    }
    return r;
}

std::string F1Report::to_json(const LabelHierarchy& h) const {
    nlohmann::ordered_json j;
    j["micro_f1"] = micro_f1;
    j["macro_f1"] = macro_f1;
    j["macro_mode"] = macro_mode == MacroMode::kAllLabels ? "all_labels" : "observed_only";
    j["per_level_micro_f1"] = per_level_micro;
    nlohmann::ordered_json labels = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < per_label.size(); ++i) {
        const auto& c = per_label[i];
        labels[h.name(static_cast<LabelId>(i))] = {{"tp", c.tp},       {"fp", c.fp},         {"fn", c.fn},
                                                   {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}};
    }
    j["per_label"] = std::move(labels);
    return j.dump(2);
}

}  // namespace hbgl
