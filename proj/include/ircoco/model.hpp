#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ircoco/error.hpp"
#include "ircoco/rng.hpp"
#include "ircoco/tensor.hpp"
#include "ircoco/vocab.hpp"

namespace ircoco {

enum class HeadKind { vocabulary, scalar };

struct ModelConfig {
    int layers = 4;
    int heads = 4;
    int d_model = 256;
    int vocab_size = 0;
    int max_len = 256;
    HeadKind head = HeadKind::vocabulary;

    void validate() const {
        if (layers < 1 || heads < 1 || d_model < 1 || vocab_size < 5 || max_len < 2)
            throw ContractViolation("model config: all dimensions must be positive (vocab >= 5)");
        if (d_model % heads != 0)
            throw ContractViolation("model config: d_model must be divisible by heads");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"layers", c.layers},       {"heads", c.heads},
                       {"d_model", c.d_model},     {"vocab_size", c.vocab_size},
                       {"max_len", c.max_len},
                       {"head", c.head == HeadKind::vocabulary ? "vocabulary" : "scalar"}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("layers").get_to(c.layers);
    j.at("heads").get_to(c.heads);
    j.at("d_model").get_to(c.d_model);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("max_len").get_to(c.max_len);
    const auto h = j.at("head").get<std::string>();
    if (h == "vocabulary") c.head = HeadKind::vocabulary;
    else if (h == "scalar") c.head = HeadKind::scalar;
    else throw FormatError("checkpoint header: unknown head kind '" + h + "'");
}

// Pre-norm GPT-2-family decoder block. Attention projections are stored per
// head, so no column slicing is needed; the output projection is summed over
// heads, which equals concatenation followed by one [d x d] matmul.
struct DecoderBlock {
    TensorPtr ln1_g, ln1_b, ln2_g, ln2_b;
    std::vector<TensorPtr> wq, wk, wv, wo;  // [d x dh], [d x dh], [d x dh], [dh x d]
    TensorPtr w1, b1, w2, b2;               // MLP d -> 4d -> d
};

struct DecoderLM {
    ModelConfig config;
    TensorPtr wte, wpe;
    std::vector<DecoderBlock> blocks;
    TensorPtr lnf_g, lnf_b;
    TensorPtr head_w, head_b;  // vocabulary: [d x V], [1 x V]; scalar: [d x 1], [1 x 1]

    static DecoderLM init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        DecoderLM m;
        m.config = cfg;
        const int d = cfg.d_model, dh = cfg.d_model / cfg.heads;
        auto weight = [&rng](int r, int c) {
            auto t = make_tensor(r, c, true);
            for (auto& v : t->data) v = float(rng.normal() * 0.02);
            return t;
        };
        auto zeros = [](int r, int c) { return make_tensor(r, c, true); };
        auto ones = [](int r, int c) {
            auto t = make_tensor(r, c, true);
            std::fill(t->data.begin(), t->data.end(), 1.0f);
            return t;
        };
        m.wte = weight(cfg.vocab_size, d);
        m.wpe = weight(cfg.max_len, d);
        for (int l = 0; l < cfg.layers; ++l) {
            DecoderBlock b;
            b.ln1_g = ones(1, d);
            b.ln1_b = zeros(1, d);
            for (int h = 0; h < cfg.heads; ++h) {
                b.wq.push_back(weight(d, dh));
                b.wk.push_back(weight(d, dh));
                b.wv.push_back(weight(d, dh));
                b.wo.push_back(weight(dh, d));
            }
            b.ln2_g = ones(1, d);
            b.ln2_b = zeros(1, d);
            b.w1 = weight(d, 4 * d);
            b.b1 = zeros(1, 4 * d);
            b.w2 = weight(4 * d, d);
            b.b2 = zeros(1, d);
            m.blocks.push_back(std::move(b));
        }
        m.lnf_g = ones(1, d);
        m.lnf_b = zeros(1, d);
        const int head_cols = cfg.head == HeadKind::vocabulary ? cfg.vocab_size : 1;
        m.head_w = weight(d, head_cols);
        m.head_b = zeros(1, head_cols);
        return m;
    }

    std::vector<std::pair<std::string, TensorPtr>> named_parameters() const {
        std::vector<std::pair<std::string, TensorPtr>> out;
        out.emplace_back("wte", wte);
        out.emplace_back("wpe", wpe);
        for (size_t l = 0; l < blocks.size(); ++l) {
            const auto& b = blocks[l];
            const std::string p = "b" + std::to_string(l) + ".";
            out.emplace_back(p + "ln1.g", b.ln1_g);
            out.emplace_back(p + "ln1.b", b.ln1_b);
            for (size_t h = 0; h < b.wq.size(); ++h) {
                const std::string hp = p + "h" + std::to_string(h) + ".";
                out.emplace_back(hp + "wq", b.wq[h]);
                out.emplace_back(hp + "wk", b.wk[h]);
                out.emplace_back(hp + "wv", b.wv[h]);
                out.emplace_back(hp + "wo", b.wo[h]);
            }
            out.emplace_back(p + "ln2.g", b.ln2_g);
            out.emplace_back(p + "ln2.b", b.ln2_b);
            out.emplace_back(p + "mlp.w1", b.w1);
            out.emplace_back(p + "mlp.b1", b.b1);
            out.emplace_back(p + "mlp.w2", b.w2);
            out.emplace_back(p + "mlp.b2", b.b2);
        }
        out.emplace_back("lnf.g", lnf_g);
        out.emplace_back("lnf.b", lnf_b);
        out.emplace_back("head.w", head_w);
        out.emplace_back("head.b", head_b);
        return out;
    }

    std::vector<TensorPtr> parameters() const {
        std::vector<TensorPtr> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    void zero_grad() const {
        for (const auto& p : parameters()) p->zero_grad();
    }

    size_t parameter_count() const {
        size_t n = 0;
        for (const auto& p : parameters()) n += p->numel();
        return n;
    }
};

namespace detail {

inline void check_ids(const ModelConfig& cfg, std::span<const int> ids) {
    if (ids.empty()) throw ContractViolation("model: empty token sequence");
    if (int(ids.size()) > cfg.max_len)
        throw ContractViolation("model: sequence of " + std::to_string(ids.size()) +
                                " exceeds max_len " + std::to_string(cfg.max_len));
    for (const int id : ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw ContractViolation("model: token id " + std::to_string(id) + " outside vocabulary");
}

}  // namespace detail

// Final-block hidden states (after the closing layer norm), shape [T x d_model].
inline TensorPtr hidden_states(Tape& tape, const DecoderLM& m, std::span<const int> ids) {
    detail::check_ids(m.config, ids);
    const int T = int(ids.size());
    const int dh = m.config.d_model / m.config.heads;
    const float scale = 1.0f / std::sqrt(float(dh));

    auto tok = embed_lookup(tape, m.wte, ids);
    auto pos = slice_rows(tape, m.wpe, 0, T);
    auto h = add(tape, tok, pos);
    auto mask = T > 1 ? causal_mask(T) : nullptr;
    auto scale_t = scalar_tensor(scale);

    for (const auto& blk : m.blocks) {
        auto x = add(tape, mul(tape, layer_norm(tape, h), blk.ln1_g), blk.ln1_b);
        TensorPtr attn_out;
        for (size_t head = 0; head < blk.wq.size(); ++head) {
            auto q = matmul(tape, x, blk.wq[head]);
            auto k = matmul(tape, x, blk.wk[head]);
            auto v = matmul(tape, x, blk.wv[head]);
            auto scores = mul(tape, matmul_nt(tape, q, k), scale_t);
            if (mask) scores = add(tape, scores, mask);
            auto probs = softmax_rows(tape, scores);
            auto ctx = matmul(tape, probs, v);
            auto proj = matmul(tape, ctx, blk.wo[head]);
            attn_out = attn_out ? add(tape, attn_out, proj) : proj;
        }
        h = add(tape, h, attn_out);
        auto y = add(tape, mul(tape, layer_norm(tape, h), blk.ln2_g), blk.ln2_b);
        auto ff = add(tape, matmul(tape, gelu(tape, add(tape, matmul(tape, y, blk.w1), blk.b1)),
                                   blk.w2),
                      blk.b2);
        h = add(tape, h, ff);
    }
    return add(tape, mul(tape, layer_norm(tape, h), m.lnf_g), m.lnf_b);
}

// Logits at every position, [T x vocab_size]. Vocabulary head only.
inline TensorPtr logits_all(Tape& tape, const DecoderLM& m, std::span<const int> ids) {
    if (m.config.head != HeadKind::vocabulary)
        throw ContractViolation("model: vocabulary head required");
    auto h = hidden_states(tape, m, ids);
    return add(tape, matmul(tape, h, m.head_w), m.head_b);
}

// Logits at the last position only, [1 x vocab_size].
inline TensorPtr logits_last(Tape& tape, const DecoderLM& m, std::span<const int> ids) {
    if (m.config.head != HeadKind::vocabulary)
        throw ContractViolation("model: vocabulary head required");
    auto h = hidden_states(tape, m, ids);
    auto last = slice_rows(tape, h, h->rows - 1, 1);
    return add(tape, matmul(tape, last, m.head_w), m.head_b);
}

// softmax(K h_t + b) over the vocabulary for the last position.
inline std::vector<float> next_token_distribution(const DecoderLM& m, std::span<const int> ids) {
    Tape tape;
    tape.recording = false;
    auto probs = softmax_rows(tape, logits_last(tape, m, ids));
    return probs->data;
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

enum class DecodeMode { greedy, sample };

struct DecodedOutput {
    std::vector<int> tokens;        // generated ids, </s> excluded
    std::vector<float> log_probs;   // under the decoding distribution
    bool terminated = false;        // saw </s>
};

// Autoregressive decoding from [<s>] + prefix. Greedy mode breaks logit ties
// toward the lower vocabulary index; sample mode draws from the
// temperature-adjusted distribution.
inline DecodedOutput decode(const DecoderLM& m, std::span<const int> prefix, DecodeMode mode,
                            float temperature, int max_new, Rng* rng = nullptr) {
    if (max_new < 1) throw ContractViolation("decode: max_new must be >= 1");
    if (mode == DecodeMode::sample && !(temperature > 0.0f))
        throw ContractViolation("decode: sample mode needs temperature > 0");
    if (mode == DecodeMode::sample && rng == nullptr)
        throw ContractViolation("decode: sample mode needs an rng");
    if (1 + int(prefix.size()) > m.config.max_len - max_new)
        throw ContractViolation("decode: prefix exceeds max_len - max_new");

    std::vector<int> ids;
    ids.reserve(1 + prefix.size() + size_t(max_new));
    ids.push_back(tokens::kBos);
    ids.insert(ids.end(), prefix.begin(), prefix.end());

    DecodedOutput out;
    for (int step = 0; step < max_new; ++step) {
        Tape tape;
        tape.recording = false;
        auto logits = logits_last(tape, m, ids);
        if (mode == DecodeMode::sample && temperature != 1.0f)
            logits = mul(tape, logits, scalar_tensor(1.0f / temperature));
        auto probs = softmax_rows(tape, logits);
        int pick = 0;
        if (mode == DecodeMode::greedy) {
            for (int j = 1; j < probs->cols; ++j)
                if (probs->data[j] > probs->data[pick]) pick = j;  // ties keep the lower index
        } else {
            const double u = rng->uniform();
            double acc = 0.0;
            pick = probs->cols - 1;
            for (int j = 0; j < probs->cols; ++j) {
                acc += double(probs->data[j]);
                if (u < acc) {
                    pick = j;
                    break;
                }
            }
        }
        const float logp = std::log(std::max(probs->data[pick], 1e-30f));
        if (pick == tokens::kEos) {
            out.terminated = true;
            break;
        }
        out.tokens.push_back(pick);
        out.log_probs.push_back(logp);
        ids.push_back(pick);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: 4-byte little-endian header length, JSON header (format
// version, config, tensor directory), then raw little-endian f32 data.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const DecoderLM& m, const std::string& path) {
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["config"] = m.config;
    nlohmann::json dir = nlohmann::json::array();
    uint64_t offset = 0;
    const auto named = m.named_parameters();
    for (const auto& [name, t] : named) {
        const uint64_t bytes = uint64_t(t->numel()) * 4;
        dir.push_back({{"name", name},
                       {"shape", std::vector<int>{t->rows, t->cols}},
                       {"offset", offset},
                       {"length", bytes}});
        offset += bytes;
    }
    header["tensors"] = dir;
    const std::string hs = header.dump();
    if (hs.size() > 0x7fffffff) throw Error("checkpoint header too large");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    const uint32_t hlen = uint32_t(hs.size());
    char lenbuf[4] = {char(hlen & 0xff), char((hlen >> 8) & 0xff), char((hlen >> 16) & 0xff),
                      char((hlen >> 24) & 0xff)};
    out.write(lenbuf, 4);
    out.write(hs.data(), std::streamsize(hs.size()));
    for (const auto& [name, t] : named)
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  std::streamsize(t->numel() * 4));
    if (!out) throw Error("write failed: " + path);
}

inline DecoderLM load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path);
    char lenbuf[4];
    if (!in.read(lenbuf, 4)) throw FormatError(path + ": truncated checkpoint (missing header length)");
    const uint32_t hlen = uint32_t(uint8_t(lenbuf[0])) | uint32_t(uint8_t(lenbuf[1])) << 8 |
                          uint32_t(uint8_t(lenbuf[2])) << 16 | uint32_t(uint8_t(lenbuf[3])) << 24;
    std::string hs(hlen, '\0');
    if (!in.read(hs.data(), hlen)) throw FormatError(path + ": truncated checkpoint (header)");
    nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
    if (header.is_discarded()) throw FormatError(path + ": checkpoint header is not valid JSON");
    if (!header.contains("format_version") || header["format_version"] != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint format_version");

    ModelConfig cfg;
    try {
        cfg = header.at("config").get<ModelConfig>();
        cfg.validate();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad config in checkpoint header: " + e.what());
    }
    Rng dummy(0);
    DecoderLM m = DecoderLM::init(cfg, dummy);

    std::unordered_map<std::string, TensorPtr> by_name;
    for (auto& [name, t] : m.named_parameters()) by_name[name] = t;

    const auto& dir = header.at("tensors");
    if (dir.size() != by_name.size())
        throw FormatError(path + ": tensor directory lists " + std::to_string(dir.size()) +
                          " tensors, config implies " + std::to_string(by_name.size()));
    struct Entry {
        std::string name;
        int rows, cols;
        uint64_t offset, length;
    };
    std::vector<Entry> entries;
    for (const auto& e : dir) {
        Entry ent;
        try {
            ent.name = e.at("name").get<std::string>();
            const auto shape = e.at("shape").get<std::vector<int>>();
            if (shape.size() != 2) throw FormatError(path + ": tensor " + ent.name + " is not 2-D");
            ent.rows = shape[0];
            ent.cols = shape[1];
            ent.offset = e.at("offset").get<uint64_t>();
            ent.length = e.at("length").get<uint64_t>();
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError(path + ": malformed tensor directory: " + ex.what());
        }
        const auto it = by_name.find(ent.name);
        if (it == by_name.end())
            throw FormatError(path + ": unknown tensor '" + ent.name + "' in directory");
        const auto& t = it->second;
        if (t->rows != ent.rows || t->cols != ent.cols) {
            std::string field = "shape of " + ent.name;
            if (ent.name == "wte") field = "vocab_size";
            else if (ent.name == "wpe") field = "max_len";
            else if (ent.name == "head.w") field = "head/vocab_size";
            throw FormatError(path + ": checkpoint disagrees with its config on " + field + " (" +
                              std::to_string(ent.rows) + "x" + std::to_string(ent.cols) + " vs " +
                              std::to_string(t->rows) + "x" + std::to_string(t->cols) + ")");
        }
        if (ent.length != uint64_t(t->numel()) * 4)
            throw FormatError(path + ": tensor " + ent.name + " has wrong byte length");
        entries.push_back(std::move(ent));
    }

    const std::streampos data_start = std::streampos(4) + std::streampos(hlen);
    for (const auto& ent : entries) {
        const auto& t = by_name[ent.name];
        in.seekg(data_start + std::streampos(ent.offset));
        if (!in.read(reinterpret_cast<char*>(t->data.data()), std::streamsize(ent.length)))
            throw FormatError(path + ": truncated checkpoint (tensor " + ent.name + ")");
    }
    // Nothing meaningful may follow the last tensor.
    return m;
}

}  // namespace ircoco
