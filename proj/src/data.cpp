// SPDX-License-Identifier: Apache-2.0
#include "hbgl/data.hpp"

#include "hbgl/errors.hpp"
#include "hbgl/special_tokens.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace hbgl {

using json = nlohmann::json;

namespace {

const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> kReserved{"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};
    return kReserved;
}

}  // namespace

Vocabulary::Vocabulary() {
    for (const auto& t : reserved_tokens()) {
        index_.emplace(t, static_cast<int>(tokens_.size()));
        tokens_.push_back(t);
    }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, int min_count) {
    std::unordered_map<std::string, long> counts;
    for (const auto& text : texts)
        for (auto& w : split_words(text)) ++counts[w];
    std::vector<std::pair<std::string, long>> ordered(counts.begin(), counts.end());
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [tok, n] : ordered) {
        if (n < min_count || v.index_.contains(tok)) continue;
        v.index_.emplace(tok, static_cast<int>(v.tokens_.size()));
        v.tokens_.push_back(tok);
    }
    return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    const auto& reserved = reserved_tokens();
    if (tokens.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens.begin()))
        throw ValidationError("vocabulary must start with [PAD] [CLS] [SEP] [MASK] [UNK]");
    Vocabulary v;
    for (std::size_t i = reserved.size(); i < tokens.size(); ++i) {
        if (tokens[i].empty()) throw ValidationError("empty token at id " + std::to_string(i));
        if (!v.index_.emplace(tokens[i], static_cast<int>(v.tokens_.size())).second)
            throw ValidationError("duplicate token '" + tokens[i] + "'");
        v.tokens_.push_back(std::move(tokens[i]));
    }
    return v;
}

std::string Vocabulary::to_text() const {
    std::string out;
    for (const auto& t : tokens_) {
        out += t;
        out += '\n';
    }
    return out;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string line(text.substr(start, end - start));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) tokens.push_back(std::move(line));
        start = end + 1;
    }
    return from_tokens(std::move(tokens));
}

std::optional<int> Vocabulary::find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

int Vocabulary::id(std::string_view token) const { return find(token).value_or(tokens::kUnk); }

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw IndexError("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
    return ids;
}

std::vector<RawSample> read_jsonl(std::istream& in) {
    std::vector<RawSample> out;
    std::string line;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t line_offset = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("malformed JSONL at line " + std::to_string(line_no) + ": " + e.what(),
                             line_offset + e.byte);
        }
        if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string() ||
            !obj.contains("labels") || !obj["labels"].is_array())
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": expected {\"id\", \"text\", \"labels\"}");
        RawSample s;
        s.id = obj.contains("id") ? obj["id"].get<std::string>() : std::to_string(line_no);
        s.text = obj["text"].get<std::string>();
        for (const auto& l : obj["labels"]) s.labels.push_back(l.get<std::string>());
        out.push_back(std::move(s));
    }
    return out;
}

void write_jsonl(std::ostream& out, const std::vector<RawSample>& samples) {
    for (const auto& s : samples) out << json{{"id", s.id}, {"text", s.text}, {"labels", s.labels}}.dump() << '\n';
}

std::vector<Sample> encode_samples(const std::vector<RawSample>& raw, const Vocabulary& vocab,
                                   const LabelHierarchy& h) {
    std::vector<Sample> out;
    out.reserve(raw.size());
    for (const auto& r : raw) {
        Sample s;
        s.id = r.id;
        s.text = tokenize(r.text, vocab);
        for (const auto& name : r.labels) {
            auto id = h.find(name);
            if (!id) throw ValidationError("sample '" + r.id + "' has unknown label '" + name + "'");
            s.labels.push_back(*id);
        }
        s.labels = normalize(std::move(s.labels));
        out.push_back(std::move(s));
    }
    return out;
}

DatasetReport validate_dataset(const std::vector<Sample>& samples, const LabelHierarchy& h) {
    DatasetReport r;
    r.per_level_counts.assign(static_cast<std::size_t>(h.max_level()), {});
    for (const auto& s : samples) {
        if (s.labels.empty()) {
            r.rejected.push_back(s.id);
            continue;
        }
        ++r.accepted;
        for (LabelId id : s.labels) ++r.per_level_counts[static_cast<std::size_t>(h.level(id) - 1)][id];
        if (!is_upward_closed(h, s.labels)) r.closure_warnings.push_back(s.id);
    }
    return r;
}

void require_valid(const std::vector<Sample>& samples, const LabelHierarchy& h) {
    auto report = validate_dataset(samples, h);
    if (report.ok()) return;
    std::string msg = "samples without labels: ";
    for (std::size_t i = 0; i < report.rejected.size() && i < 10; ++i)
        msg += (i ? ", " : "") + report.rejected[i];
    throw ValidationError(msg);
}

// --- synthetic corpus -------------------------------------------------------

void SyntheticSpec::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("synthetic spec: " + m); };
    if (depth < 1) fail("depth must be >= 1");
    if (branching < 1) fail("branching must be >= 1");
    if (num_labels < depth) fail("num_labels must be >= depth");
    if (multi_path_prob < 0.0 || multi_path_prob > 1.0) fail("multi_path_prob must lie in [0, 1]");
    if (signature_tokens_per_label < 1) fail("signature_tokens_per_label must be >= 1");
    if (noise_tokens < 1) fail("noise_tokens must be >= 1");
    if (text_len < 1) fail("text_len must be >= 1");
    if (n_samples < 3) fail("n_samples must be >= 3");
    if (mentions_per_label < 1) fail("mentions_per_label must be >= 1");
    if (distractor_prob < 0.0 || distractor_prob > 1.0) fail("distractor_prob must lie in [0, 1]");
    if (label_skew < 0.0) fail("label_skew must be >= 0");
    if (dag_extra_edges < 0) fail("dag_extra_edges must be >= 0");
}

namespace {

// Portable draws: the standard distributions differ across library
// implementations, the raw engine output does not.
std::size_t draw_index(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }
double draw_unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <class V>
void shuffle(V& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[draw_index(rng, i)]);
}

std::size_t draw_weighted(const std::vector<double>& cumulative, std::mt19937_64& rng) {
    const double u = draw_unit(rng) * cumulative.back();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

// Pronounceable pseudo-words; index -> unique word.
std::string pseudo_word(std::size_t index, std::string_view prefix) {
    static const char* kOnset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    static const char* kVowel[] = {"a", "e", "i", "o", "u"};
    std::string w(prefix);
    std::size_t x = index;
    do {
        w += kOnset[x % 14];
        x /= 14;
        w += kVowel[x % 5];
        x /= 5;
    } while (x > 0);
    return w;
}

std::vector<int> level_sizes(const SyntheticSpec& spec) {
    std::vector<double> weights(spec.depth);
    const double ratio = std::min(2.0, static_cast<double>(spec.branching));
    for (int h = 0; h < spec.depth; ++h) weights[h] = std::pow(ratio, h);
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<int> sizes(spec.depth);
    int assigned = 0;
    for (int h = 0; h < spec.depth; ++h) {
        sizes[h] = std::max(1, static_cast<int>(std::lround(spec.num_labels * weights[h] / total)));
        assigned += sizes[h];
    }
    sizes.back() += spec.num_labels - assigned;
    for (int h = 1; h < spec.depth; ++h) {
        if (sizes[h] < 1 || sizes[h] > sizes[h - 1] * spec.branching)
            throw ConfigError("synthetic spec: branching " + std::to_string(spec.branching) +
                              " cannot hold " + std::to_string(spec.num_labels) + " labels in " +
                              std::to_string(spec.depth) + " levels");
    }
    return sizes;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const auto sizes = level_sizes(spec);
    const int n_labels = spec.num_labels;

    // Taxonomy: labels grouped by level, parents drawn from the level above.
    std::vector<std::vector<LabelId>> parents(n_labels);
    std::vector<std::vector<LabelId>> by_level(spec.depth);
    LabelId next = 0;
    for (int h = 0; h < spec.depth; ++h)
        for (int k = 0; k < sizes[h]; ++k) by_level[h].push_back(next++);
    for (int h = 1; h < spec.depth; ++h) {
        const auto& upper = by_level[h - 1];
        std::vector<int> load(upper.size(), 0);
        std::vector<std::size_t> order(upper.size());
        std::iota(order.begin(), order.end(), 0);
        shuffle(order, rng);
        for (std::size_t k = 0; k < by_level[h].size(); ++k) {
            std::size_t slot;
            if (k < order.size()) {
                slot = order[k];  // first pass gives every upper label one child
            } else {
                do slot = draw_index(rng, upper.size());
                while (load[slot] >= spec.branching);
            }
            ++load[slot];
            parents[by_level[h][k]].push_back(upper[slot]);
        }
    }
    for (int e = 0; e < spec.dag_extra_edges && spec.depth > 1; ++e) {
        const auto h = 1 + draw_index(rng, static_cast<std::size_t>(spec.depth - 1));
        const LabelId child = by_level[h][draw_index(rng, by_level[h].size())];
        const LabelId parent = by_level[h - 1][draw_index(rng, by_level[h - 1].size())];
        if (std::find(parents[child].begin(), parents[child].end(), parent) == parents[child].end())
            parents[child].push_back(parent);
    }

    // Signature tokens are disjoint per label; names use the first two.
    std::vector<std::vector<std::string>> signature(n_labels);
    std::vector<std::string> names(n_labels);
    for (int i = 0; i < n_labels; ++i) {
        for (int k = 0; k < spec.signature_tokens_per_label; ++k)
            signature[i].push_back(
                pseudo_word(static_cast<std::size_t>(i * spec.signature_tokens_per_label + k), "q"));
        names[i] = signature[i][0];
        if (signature[i].size() > 1) names[i] += " " + signature[i][1];
    }
    std::vector<std::string> noise(spec.noise_tokens);
    for (int k = 0; k < spec.noise_tokens; ++k) noise[k] = pseudo_word(static_cast<std::size_t>(k), "x");

    auto hierarchy = LabelHierarchy::build(names, parents);

    // Leaf popularity: Zipf over a random ranking.
    std::vector<LabelId> leaves;
    for (LabelId i = 0; i < n_labels; ++i)
        if (hierarchy.is_leaf(i)) leaves.push_back(i);
    std::vector<std::size_t> rank(leaves.size());
    std::iota(rank.begin(), rank.end(), 0);
    shuffle(rank, rng);
    std::vector<double> leaf_cdf(leaves.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        acc += 1.0 / std::pow(static_cast<double>(rank[k] + 1), spec.label_skew);
        leaf_cdf[k] = acc;
    }
    std::vector<double> noise_cdf(noise.size());
    acc = 0.0;
    for (std::size_t k = 0; k < noise.size(); ++k) {
        acc += 1.0 / static_cast<double>(k + 1);
        noise_cdf[k] = acc;
    }

    auto add_ancestors = [&](LabelId leaf, std::set<LabelId>& out) {
        std::vector<LabelId> stack{leaf};
        while (!stack.empty()) {
            LabelId v = stack.back();
            stack.pop_back();
            if (!out.insert(v).second) continue;
            for (LabelId p : hierarchy.parents(v)) stack.push_back(p);
        }
    };

    std::vector<RawSample> all;
    all.reserve(static_cast<std::size_t>(spec.n_samples));
    for (int n = 0; n < spec.n_samples; ++n) {
        std::set<LabelId> labels;
        const LabelId first = leaves[draw_weighted(leaf_cdf, rng)];
        add_ancestors(first, labels);
        if (leaves.size() > 1 && draw_unit(rng) < spec.multi_path_prob) {
            LabelId second;
            do second = leaves[draw_weighted(leaf_cdf, rng)];
            while (second == first);
            add_ancestors(second, labels);
        }

        std::vector<std::string> words;
        for (LabelId id : labels)
            for (int k = 0; k < spec.mentions_per_label; ++k)
                words.push_back(signature[id][draw_index(rng, signature[id].size())]);
        if (draw_unit(rng) < spec.distractor_prob) {
            // A leaf mentioned as often as a real label but without its ancestors.
            const LabelId d = leaves[draw_index(rng, leaves.size())];
            if (!labels.contains(d))
                for (int k = 0; k < spec.mentions_per_label; ++k)
                    words.push_back(signature[d][draw_index(rng, signature[d].size())]);
        }
        while (static_cast<int>(words.size()) < spec.text_len) words.push_back(noise[draw_weighted(noise_cdf, rng)]);
        shuffle(words, rng);

        RawSample s;
        char id[32];
        std::snprintf(id, sizeof id, "s%05d", n);
        s.id = id;
        for (std::size_t k = 0; k < words.size(); ++k) s.text += (k ? " " : "") + words[k];
        for (LabelId l : labels) s.labels.push_back(names[l]);
        all.push_back(std::move(s));
    }

    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    const std::size_t n_train = all.size() * 70 / 100;
    const std::size_t n_dev = all.size() * 15 / 100;
    SyntheticDataset out;
    out.taxonomy_json = hierarchy.to_json();
    for (std::size_t k = 0; k < order.size(); ++k) {
        auto& dst = k < n_train ? out.train : (k < n_train + n_dev ? out.dev : out.test);
        dst.push_back(all[order[k]]);
    }
    return out;
}

}  // namespace hbgl
