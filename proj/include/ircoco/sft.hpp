#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ircoco/corpus.hpp"
#include "ircoco/error.hpp"
#include "ircoco/model.hpp"
#include "ircoco/rng.hpp"
#include "ircoco/tensor.hpp"
#include "ircoco/vocab.hpp"

namespace ircoco {

// One padded row: ids and a loss mask of equal length. mask[t] = 1 marks the
// token at t as a prediction target (scored from position t-1).
struct SftRow {
    std::vector<int> ids;
    std::vector<uint8_t> mask;
};

struct SftBatch {
    std::vector<SftRow> rows;  // padded to a common length
    int batch_size = 0;
};

// [<s>] + prefix + reference + [</s>]; loss covers the reference tokens and
// the closing </s>, never the prefix.
inline SftRow make_sft_row(const Vocab& vocab, const CompletionExample& ex,
                           const ModelConfig& cfg) {
    SftRow row;
    row.ids.push_back(tokens::kBos);
    for (const auto& t : ex.prefix) row.ids.push_back(vocab.encode(t));
    row.mask.assign(row.ids.size(), 0);
    for (const auto& t : ex.reference) {
        row.ids.push_back(vocab.encode(t));
        row.mask.push_back(1);
    }
    row.ids.push_back(tokens::kEos);
    row.mask.push_back(1);
    if (int(row.ids.size()) > cfg.max_len)
        throw ContractViolation("sft: example '" + ex.id + "' (" + std::to_string(row.ids.size()) +
                                " ids) exceeds max_len " + std::to_string(cfg.max_len));
    return row;
}

// Language-model variant: every token after <s> is a target. Used by the
// optional pre-training pass over full sequences.
inline SftRow make_lm_row(const Vocab& vocab, std::span<const std::string> toks,
                          const ModelConfig& cfg) {
    SftRow row;
    row.ids.push_back(tokens::kBos);
    row.mask.push_back(0);
    for (const auto& t : toks) {
        row.ids.push_back(vocab.encode(t));
        row.mask.push_back(1);
    }
    row.ids.push_back(tokens::kEos);
    row.mask.push_back(1);
    if (int(row.ids.size()) > cfg.max_len)
        throw ContractViolation("lm row exceeds max_len");
    return row;
}

inline SftBatch make_batch(std::vector<SftRow> rows) {
    SftBatch b;
    size_t maxlen = 0;
    for (const auto& r : rows) maxlen = std::max(maxlen, r.ids.size());
    for (auto& r : rows) {
        r.ids.resize(maxlen, tokens::kPad);
        r.mask.resize(maxlen, 0);
    }
    b.batch_size = int(rows.size());
    b.rows = std::move(rows);
    return b;
}

namespace detail {

// Trailing pads carry no information; the forward pass runs on the unpadded
// span, which leaves every real position bit-identical to the unpadded batch.
inline size_t valid_length(const SftRow& row) {
    size_t n = row.ids.size();
    while (n > 0 && row.ids[n - 1] == tokens::kPad) --n;
    for (size_t i = 0; i < n; ++i)
        if (row.ids[i] == tokens::kPad)
            throw ContractViolation("sft: interior <pad> in a batch row");
    for (size_t i = n; i < row.ids.size(); ++i)
        if (row.mask[i]) throw ContractViolation("sft: loss mask set on a <pad> position");
    return n;
}

}  // namespace detail

struct SftTerm {
    TensorPtr loss;   // [1 x 1]; mean over all masked positions in the batch
    long count = 0;   // masked positions
};

// Teacher-forcing cross entropy: mean over masked positions of
// -log p(y_t | y_{1:t-1}, X) across the whole batch.
inline SftTerm sft_term(Tape& tape, const DecoderLM& m, const SftBatch& batch) {
    long count = 0;
    for (const auto& row : batch.rows) {
        const size_t n = detail::valid_length(row);
        for (size_t i = 0; i < n; ++i) count += row.mask[i] ? 1 : 0;
    }
    if (count == 0) throw ContractViolation("sft_loss: batch has an all-zero mask");

    TensorPtr total;
    for (const auto& row : batch.rows) {
        const size_t n = detail::valid_length(row);
        if (n < 2) continue;
        const std::span<const int> ids(row.ids.data(), n);
        bool any = false;
        for (size_t t = 1; t < n; ++t) any = any || row.mask[t];
        if (!any) continue;
        auto logits = logits_all(tape, m, ids.subspan(0, n - 1));
        const std::span<const int> targets(row.ids.data() + 1, n - 1);
        auto ce = cross_entropy_rows(tape, logits, targets);
        auto w = make_tensor(int(n - 1), 1);
        for (size_t t = 1; t < n; ++t) w->data[t - 1] = row.mask[t] ? 1.0f : 0.0f;
        auto masked = mul(tape, ce, w);
        auto row_sum = matmul(tape, full_tensor(1, int(n - 1), 1.0f), masked);
        total = total ? add(tape, total, row_sum) : row_sum;
    }
    if (!total) throw ContractViolation("sft_loss: no scorable positions in batch");
    auto loss = mul(tape, total, scalar_tensor(1.0f / float(count)));
    return {loss, count};
}

inline TensorPtr sft_loss(Tape& tape, const DecoderLM& m, const SftBatch& batch) {
    return sft_term(tape, m, batch).loss;
}

inline double sft_loss_value(const DecoderLM& m, const SftBatch& batch) {
    Tape tape;
    tape.recording = false;
    return double(sft_term(tape, m, batch).loss->data[0]);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct SftConfig {
    int epochs = 5;
    int batch_size = 16;
    float lr = 3e-4f;
    uint64_t seed = 1;
    int lm_pretrain_epochs = 0;  // optional full-sequence pass before SFT
    float grad_clip = 0.0f;
};

struct EpochLoss {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
};

using StepCallback = std::function<void(long step, const DecoderLM& model)>;

// Seed-deterministic batch order, shared by SFT and alignment so runs with
// the same seed see identical batches.
inline std::vector<std::vector<size_t>> epoch_batches(size_t n, int batch_size, Rng& shuffle_rng) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    shuffle_rng.shuffle(order);
    std::vector<std::vector<size_t>> batches;
    for (size_t i = 0; i < n; i += size_t(batch_size)) {
        const size_t end = std::min(n, i + size_t(batch_size));
        batches.emplace_back(order.begin() + i, order.begin() + end);
    }
    return batches;
}

inline double dataset_sft_loss(const DecoderLM& m, std::span<const SftRow> rows, int batch_size) {
    double total = 0.0;
    long count = 0;
    for (size_t i = 0; i < rows.size(); i += size_t(batch_size)) {
        const size_t end = std::min(rows.size(), i + size_t(batch_size));
        SftBatch b = make_batch(std::vector<SftRow>(rows.begin() + i, rows.begin() + end));
        Tape tape;
        tape.recording = false;
        const auto term = sft_term(tape, m, b);
        total += double(term.loss->data[0]) * double(term.count);
        count += term.count;
    }
    return count ? total / double(count) : 0.0;
}

// Teacher-forcing training. Deterministic given the seed; per-epoch train and
// held-out losses are returned in order.
inline std::vector<EpochLoss> train_sft(DecoderLM& m, std::span<const CompletionExample> train,
                                        std::span<const CompletionExample> valid, const Vocab& vocab,
                                        const SftConfig& cfg,
                                        const StepCallback& on_step = nullptr) {
    if (train.empty()) throw ContractViolation("train_sft: empty dataset");
    std::vector<SftRow> rows;
    rows.reserve(train.size());
    for (const auto& ex : train) rows.push_back(make_sft_row(vocab, ex, m.config));
    std::vector<SftRow> valid_rows;
    for (const auto& ex : valid) valid_rows.push_back(make_sft_row(vocab, ex, m.config));

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    acfg.grad_clip = cfg.grad_clip;
    AdamState adam;
    const auto params = m.parameters();
    adam.init(params, acfg);

    const Rng base(cfg.seed);
    std::vector<EpochLoss> log;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = base.fork("train-shuffle", uint64_t(epoch));
        double loss_sum = 0.0;
        long batches = 0;
        for (const auto& batch_ids : epoch_batches(rows.size(), cfg.batch_size, shuffle_rng)) {
            std::vector<SftRow> brows;
            for (const size_t id : batch_ids) brows.push_back(rows[id]);
            SftBatch batch = make_batch(std::move(brows));
            m.zero_grad();
            Tape tape;
            try {
                auto loss = sft_loss(tape, m, batch);
                tape.backward(loss);
                loss_sum += double(loss->data[0]);
            } catch (const NumericError& e) {
                throw TrainingDiverged("sft epoch " + std::to_string(epoch) + " batch " +
                                       std::to_string(batches) + ": " + e.what());
            }
            adam_step(params, adam);
            ++batches;
            ++step;
            if (on_step) on_step(step, m);
        }
        EpochLoss el;
        el.epoch = epoch;
        el.train_loss = batches ? loss_sum / double(batches) : 0.0;
        el.valid_loss = valid_rows.empty() ? 0.0 : dataset_sft_loss(m, valid_rows, cfg.batch_size);
        log.push_back(el);
    }
    return log;
}

// Optional language-model pass over whole samples (no prefix masking).
inline std::vector<EpochLoss> train_lm(DecoderLM& m, std::span<const RawSample> samples,
                                       const Vocab& vocab, const SftConfig& cfg) {
    if (samples.empty()) throw ContractViolation("train_lm: empty dataset");
    std::vector<SftRow> rows;
    for (const auto& s : samples) rows.push_back(make_lm_row(vocab, s.tokens, m.config));

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    acfg.grad_clip = cfg.grad_clip;
    AdamState adam;
    const auto params = m.parameters();
    adam.init(params, acfg);

    const Rng base(cfg.seed);
    std::vector<EpochLoss> log;
    for (int epoch = 0; epoch < cfg.lm_pretrain_epochs; ++epoch) {
        Rng shuffle_rng = base.fork("lm-shuffle", uint64_t(epoch));
        double loss_sum = 0.0;
        long batches = 0;
        for (const auto& batch_ids : epoch_batches(rows.size(), cfg.batch_size, shuffle_rng)) {
            std::vector<SftRow> brows;
            for (const size_t id : batch_ids) brows.push_back(rows[id]);
            SftBatch batch = make_batch(std::move(brows));
            m.zero_grad();
            Tape tape;
            try {
                auto loss = sft_loss(tape, m, batch);
                tape.backward(loss);
                loss_sum += double(loss->data[0]);
            } catch (const NumericError& e) {
                throw TrainingDiverged("lm epoch " + std::to_string(epoch) + ": " + e.what());
            }
            adam_step(params, adam);
            ++batches;
        }
        log.push_back({epoch, batches ? loss_sum / double(batches) : 0.0, 0.0});
    }
    return log;
}

}  // namespace ircoco
