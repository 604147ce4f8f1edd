// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hbgl/config.hpp"
#include "hbgl/data.hpp"
#include "hbgl/encoder.hpp"
#include "hbgl/label_table.hpp"
#include "hbgl/local_encoder.hpp"

#include <string>
#include <vector>

namespace hbgl {

struct NamedTensor {
    std::string name;
    MatrixF value;
};

/// File layout: one JSON header line
///   {"format": "hbgl-checkpoint", "version": 1, "meta": {...},
///    "tensors": [{"name", "shape": [r, c], "dtype": "float32", "offset"}]}
/// followed by little-endian float32 data, row-major, at the given byte
/// offsets relative to the end of the header line.
struct Checkpoint {
    Json meta = Json::object();
    std::vector<NamedTensor> tensors;

    bool has(std::string_view name) const;
    const MatrixF& tensor(std::string_view name) const;
    void add(std::string name, MatrixF value) { tensors.push_back({std::move(name), std::move(value)}); }

    std::string serialize() const;
    static Checkpoint deserialize(std::string_view bytes);
};

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::string& path, std::string_view content);
std::string read_file(const std::string& path);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string sha256_hex(std::string_view bytes);
/// SHA-256 over the encoder's parameter names and raw values.
std::string encoder_digest(const TransformerEncoder<float>& enc);

Checkpoint encoder_checkpoint(const TransformerEncoder<float>& enc, const Vocabulary& vocab);
TransformerEncoder<float> encoder_from_checkpoint(const Checkpoint& ckpt);
Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt);

Checkpoint label_table_checkpoint(const LabelEmbeddingTable<float>& table);
LabelEmbeddingTable<float> label_table_from_checkpoint(const Checkpoint& ckpt);

/// Full local model: encoder, label table, taxonomy, vocabulary.
Checkpoint local_model_checkpoint(const LocalModel<float>& model, const Vocabulary& vocab);
Checkpoint flat_model_checkpoint(const FlatModel& model, const Vocabulary& vocab);
/// "local" or "flat".
std::string model_kind(const Checkpoint& ckpt);
LocalModel<float> local_model_from_checkpoint(const Checkpoint& ckpt);
FlatModel flat_model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace hbgl
