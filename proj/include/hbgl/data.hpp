// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hbgl/hierarchy.hpp"

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hbgl {

/// Token <-> id map. Ids 0-4 are always [PAD] [CLS] [SEP] [MASK] [UNK].
class Vocabulary {
public:
    Vocabulary();

    /// Collects every whitespace token of `texts` (lowercased) occurring at
    /// least `min_count` times. Ids are assigned by descending frequency,
    /// ties broken lexicographically.
    static Vocabulary build(const std::vector<std::string>& texts, int min_count = 1);
    /// Rebuilds from an id-ordered token list whose first five entries are
    /// the reserved tokens.
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    /// One token per line, line number = id.
    std::string to_text() const;
    static Vocabulary from_text(std::string_view text);

    std::optional<int> find(std::string_view token) const;
    /// Id of `token`, or [UNK].
    int id(std::string_view token) const;
    const std::string& token(int id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Lowercased whitespace split.
std::vector<std::string> split_words(std::string_view text);
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);

/// Dataset record as stored on disk: labels by name.
struct RawSample {
    std::string id;
    std::string text;
    std::vector<std::string> labels;

    bool operator==(const RawSample&) const = default;
};

/// Tokenized sample bound to a hierarchy.
struct Sample {
    std::string id;
    std::vector<int> text;
    LabelSet labels;
};

/// One JSON object per line: {"id": ..., "text": ..., "labels": [...]}.
/// Blank lines are skipped; malformed lines raise ParseError.
std::vector<RawSample> read_jsonl(std::istream& in);
void write_jsonl(std::ostream& out, const std::vector<RawSample>& samples);

/// Tokenizes and resolves label names. Unknown labels raise ValidationError.
std::vector<Sample> encode_samples(const std::vector<RawSample>& raw, const Vocabulary& vocab,
                                   const LabelHierarchy& h);

struct DatasetReport {
    /// per_level_counts[h-1][label] = number of samples carrying that label.
    std::vector<std::map<LabelId, std::size_t>> per_level_counts;
    /// Ids of samples whose label set is not upward-closed (warnings).
    std::vector<std::string> closure_warnings;
    /// Ids of samples rejected for carrying no labels.
    std::vector<std::string> rejected;
    std::size_t accepted = 0;

    bool ok() const { return rejected.empty(); }
};

DatasetReport validate_dataset(const std::vector<Sample>& samples, const LabelHierarchy& h);

/// Throws ValidationError listing rejected samples, if any.
void require_valid(const std::vector<Sample>& samples, const LabelHierarchy& h);

struct SyntheticSpec {
    int depth = 4;
    int branching = 4;
    int num_labels = 60;
    double multi_path_prob = 0.15;
    int signature_tokens_per_label = 3;
    int noise_tokens = 400;
    int text_len = 24;
    int n_samples = 5000;
    /// Signature tokens drawn into the text for every label of the sample.
    int mentions_per_label = 2;
    /// Probability of mentioning one unrelated leaf (without its ancestors).
    double distractor_prob = 0.3;
    /// Zipf exponent of the leaf popularity distribution (0 = uniform).
    double label_skew = 1.0;
    /// Extra parent edges between adjacent levels (0 = tree).
    int dag_extra_edges = 0;
    std::uint64_t seed = 7;

    /// Throws ConfigError on inconsistent settings.
    void validate() const;
};

struct SyntheticDataset {
    std::string taxonomy_json;
    std::vector<RawSample> train, dev, test;
};

/// Builds a random taxonomy and a labelled corpus whose texts mix signature
/// tokens of the sample's labels with noise. Pure function of `spec`.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace hbgl
