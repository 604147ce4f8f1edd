// SPDX-License-Identifier: Apache-2.0
#include "hbgl/checkpoint.hpp"

#include "hbgl/errors.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace hbgl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

bool Checkpoint::has(std::string_view name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

const MatrixF& Checkpoint::tensor(std::string_view name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.value;
    throw ValidationError("checkpoint has no tensor '" + std::string(name) + "'");
}

std::string Checkpoint::serialize() const {
    Json header;
    header["format"] = "hbgl-checkpoint";
    header["version"] = 1;
    header["meta"] = meta;
    Json list = Json::array();
    std::size_t offset = 0;
    for (const auto& t : tensors) {
        list.push_back({{"name", t.name},
                        {"shape", {t.value.rows(), t.value.cols()}},
                        {"dtype", "float32"},
                        {"offset", offset}});
        offset += static_cast<std::size_t>(t.value.size()) * sizeof(float);
    }
    header["tensors"] = std::move(list);
    std::string out = header.dump();
    out.push_back('\n');
    const std::size_t base = out.size();
    out.resize(base + offset);
    std::size_t at = base;
    for (const auto& t : tensors) {
        const std::size_t n = static_cast<std::size_t>(t.value.size()) * sizeof(float);
        if (n > 0) std::memcpy(out.data() + at, t.value.data(), n);
        at += n;
    }
    return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos) throw ParseError("checkpoint header is not newline-terminated", bytes.size());
    Json header;
    try {
        header = Json::parse(bytes.substr(0, nl));
    } catch (const Json::parse_error& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what(), e.byte);
    }
    if (header.value("format", "") != "hbgl-checkpoint" || header.value("version", 0) != 1)
        throw ValidationError("not an hbgl checkpoint (format/version mismatch)");
    const std::string_view data = bytes.substr(nl + 1);
    Checkpoint ck;
    ck.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
        if (t.at("dtype") != "float32") throw ValidationError("unsupported dtype in checkpoint");
        const auto rows = t.at("shape").at(0).get<Eigen::Index>();
        const auto cols = t.at("shape").at(1).get<Eigen::Index>();
        const auto offset = t.at("offset").get<std::size_t>();
        const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(float);
        if (rows < 0 || cols < 0 || offset + n > data.size())
            throw ValidationError("tensor '" + t.at("name").get<std::string>() + "' exceeds checkpoint data");
        MatrixF m(rows, cols);
        if (n > 0) std::memcpy(m.data(), data.data() + offset, n);
        ck.tensors.push_back({t.at("name").get<std::string>(), std::move(m)});
    }
    return ck;
}

void write_file_atomic(const std::string& path, std::string_view content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw Error("failed writing '" + tmp.string() + "'");
        }
    }
    fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_file_atomic(path, ckpt.serialize()); }

Checkpoint load_checkpoint(const std::string& path) { return Checkpoint::deserialize(read_file(path)); }

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static const char* kHex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 15]);
    }
    return out;
}

std::string encoder_digest(const TransformerEncoder<float>& enc) {
    std::string buf;
    for (const auto* p : enc.parameters()) {
        buf += p->name;
        buf.push_back('\0');
        buf.append(reinterpret_cast<const char*>(p->value.data()),
                   static_cast<std::size_t>(p->value.size()) * sizeof(float));
    }
    return sha256_hex(buf);
}

namespace {

void add_encoder(Checkpoint& ck, const TransformerEncoder<float>& enc) {
    Json cfg = to_json(enc.config());
    cfg["vocab_size"] = enc.config().vocab_size;
    ck.meta["encoder_config"] = cfg;
    for (const auto* p : enc.parameters()) ck.add(p->name, p->value);
}

void add_vocab(Checkpoint& ck, const Vocabulary& vocab) { ck.meta["vocab"] = vocab.tokens(); }

void add_taxonomy(Checkpoint& ck, const LabelHierarchy& h) { ck.meta["taxonomy"] = Json::parse(h.to_json()); }

LabelHierarchy taxonomy_of(const Checkpoint& ck) {
    if (!ck.meta.contains("taxonomy")) throw ValidationError("checkpoint carries no taxonomy");
    return load_taxonomy(ck.meta.at("taxonomy").dump());
}

}  // namespace

Checkpoint encoder_checkpoint(const TransformerEncoder<float>& enc, const Vocabulary& vocab) {
    Checkpoint ck;
    ck.meta["kind"] = "encoder";
    add_encoder(ck, enc);
    add_vocab(ck, vocab);
    return ck;
}

TransformerEncoder<float> encoder_from_checkpoint(const Checkpoint& ck) {
    if (!ck.meta.contains("encoder_config")) throw ValidationError("checkpoint carries no encoder");
    TransformerEncoder<float> enc(encoder_config_from_json(ck.meta.at("encoder_config")), 0);
    for (auto* p : enc.parameters()) {
        const MatrixF& v = ck.tensor(p->name);
        if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
            throw ShapeError("tensor '" + p->name + "' has the wrong shape");
        p->value = v;
        p->zero_grad();
    }
    return enc;
}

Vocabulary vocab_from_checkpoint(const Checkpoint& ck) {
    if (!ck.meta.contains("vocab")) throw ValidationError("checkpoint carries no vocabulary");
    return Vocabulary::from_tokens(ck.meta.at("vocab").get<std::vector<std::string>>());
}

Checkpoint label_table_checkpoint(const LabelEmbeddingTable<float>& table) {
    Checkpoint ck;
    ck.meta["kind"] = "label_embeddings";
    ck.add("label_embeddings", table.weights().value);
    return ck;
}

LabelEmbeddingTable<float> label_table_from_checkpoint(const Checkpoint& ck) {
    const MatrixF& w = ck.tensor("label_embeddings");
    LabelEmbeddingTable<float> table(static_cast<std::size_t>(w.rows()), static_cast<int>(w.cols()));
    table.weights().value = w;
    return table;
}

Checkpoint local_model_checkpoint(const LocalModel<float>& model, const Vocabulary& vocab) {
    Checkpoint ck;
    ck.meta["kind"] = "local";
    ck.meta["empty_level"] = to_string(model.empty_level);
    add_encoder(ck, model.encoder);
    add_vocab(ck, vocab);
    add_taxonomy(ck, model.hierarchy);
    ck.add("label_embeddings", model.table.weights().value);
    return ck;
}

Checkpoint flat_model_checkpoint(const FlatModel& model, const Vocabulary& vocab) {
    Checkpoint ck;
    ck.meta["kind"] = "flat";
    add_encoder(ck, model.encoder);
    add_vocab(ck, vocab);
    add_taxonomy(ck, model.hierarchy);
    ck.add(model.head_weight.name, model.head_weight.value);
    ck.add(model.head_bias.name, model.head_bias.value);
    return ck;
}

std::string model_kind(const Checkpoint& ck) { return ck.meta.value("kind", ""); }

LocalModel<float> local_model_from_checkpoint(const Checkpoint& ck) {
    if (model_kind(ck) != "local") throw ValidationError("checkpoint is not a local model");
    LocalModel<float> model{taxonomy_of(ck), encoder_from_checkpoint(ck), label_table_from_checkpoint(ck),
                            parse_empty_level(ck.meta.value("empty_level", "sep"))};
    if (model.table.size() != model.hierarchy.size())
        throw ShapeError("label table rows do not match the taxonomy");
    return model;
}

FlatModel flat_model_from_checkpoint(const Checkpoint& ck) {
    if (model_kind(ck) != "flat") throw ValidationError("checkpoint is not a flat model");
    FlatModel model(taxonomy_of(ck), encoder_from_checkpoint(ck), 0);
    model.head_weight.value = ck.tensor("flat_head.weight");
    model.head_bias.value = ck.tensor("flat_head.bias");
    model.head_weight.zero_grad();
    model.head_bias.zero_grad();
    return model;
}

}  // namespace hbgl
