#pragma once

#include <span>
#include <string>
#include <vector>

#include "ircoco/corpus.hpp"
#include "ircoco/error.hpp"
#include "ircoco/metrics.hpp"
#include "ircoco/model.hpp"
#include "ircoco/sft.hpp"

namespace ircoco {

enum class MetricKind { bleu, edit_sim };

inline double completion_metric(MetricKind kind, std::span<const std::string> candidate,
                                std::span<const std::string> reference) {
    return kind == MetricKind::bleu ? bleu4(candidate, reference) : edit_sim(candidate, reference);
}

namespace detail {

inline std::vector<int> with_bos(std::span<const int> ids) {
    std::vector<int> out;
    out.reserve(ids.size() + 1);
    out.push_back(tokens::kBos);
    out.insert(out.end(), ids.begin(), ids.end());
    return out;
}

inline std::span<const int> strip_trailing_pads(std::span<const int> ids) {
    while (!ids.empty() && ids.back() == tokens::kPad) ids = ids.subspan(0, ids.size() - 1);
    return ids;
}

}  // namespace detail

// Evaluator score s' in (0, 1): logistic squashing of the scalar head read at
// the last position of [<s>] + tokens. Trailing <pad> is ignored.
inline TensorPtr critic_score_t(Tape& tape, const DecoderLM& critic, std::span<const int> ids) {
    if (critic.config.head != HeadKind::scalar)
        throw ContractViolation("critic_score: scalar head required");
    const auto stripped = detail::strip_trailing_pads(ids);
    const auto row = detail::with_bos(stripped);
    auto h = hidden_states(tape, critic, row);
    auto last = slice_rows(tape, h, h->rows - 1, 1);
    auto raw = add(tape, matmul(tape, last, critic.head_w), critic.head_b);
    return logistic(tape, raw);
}

inline double critic_score(const DecoderLM& critic, std::span<const int> ids) {
    Tape tape;
    tape.recording = false;
    return double(critic_score_t(tape, critic, ids)->data[0]);
}

// ---------------------------------------------------------------------------
// Evaluator training data: random split, greedy completion, metric score.
// ---------------------------------------------------------------------------

struct EvaluatorBuildStats {
    size_t emitted = 0;
    size_t skipped = 0;
};

// For each complete sample: split into (C_x, 10-token C_y), greedily complete
// C_x with the SFT actor, score the completion against C_y, and emit
// (C_x, score). splits_per_sample > 1 draws several cut points per sample.
inline std::vector<EvaluatorExample> build_evaluator_dataset(
    const DecoderLM& actor, const Vocab& vocab, std::span<const RawSample> corpus, MetricKind kind,
    Rng& rng, int splits_per_sample = 1, EvaluatorBuildStats* stats = nullptr) {
    if (splits_per_sample < 1)
        throw ContractViolation("build_evaluator_dataset: splits_per_sample must be >= 1");
    std::vector<EvaluatorExample> out;
    EvaluatorBuildStats st;
    for (const auto& sample : corpus) {
        for (int k = 0; k < splits_per_sample; ++k) {
            const auto split = split_example(sample, rng);
            if (!split) {
                ++st.skipped;
                break;  // too short no matter the cut point
            }
            const auto prefix_ids = vocab.encode(split->prefix);
            const auto decoded =
                decode(actor, prefix_ids, DecodeMode::greedy, 1.0f, kReferenceTokens);
            const auto candidate = vocab.decode(decoded.tokens);
            // Score against the reference as the vocabulary renders it, the
            // same canonical form the actor can actually emit.
            const auto reference = vocab.decode(vocab.encode(split->reference));
            EvaluatorExample ex;
            ex.prefix = split->prefix;
            ex.score = completion_metric(kind, candidate, reference);
            out.push_back(std::move(ex));
            ++st.emitted;
        }
    }
    if (stats) *stats = st;
    return out;
}

// ---------------------------------------------------------------------------
// Critic loss and training
// ---------------------------------------------------------------------------

// (1/N) sum (s' - s)^2 over a batch of evaluator examples.
inline TensorPtr critic_loss_t(Tape& tape, const DecoderLM& critic, const Vocab& vocab,
                               std::span<const EvaluatorExample> batch) {
    if (batch.empty()) throw ContractViolation("critic_loss: empty batch");
    TensorPtr preds;
    auto targets = make_tensor(int(batch.size()), 1);
    for (size_t i = 0; i < batch.size(); ++i) {
        const auto ids = vocab.encode(batch[i].prefix);
        auto s = critic_score_t(tape, critic, ids);
        preds = preds ? concat_rows(tape, preds, s) : s;
        targets->data[i] = float(batch[i].score);
    }
    return mse(tape, preds, targets);
}

inline double critic_loss_value(const DecoderLM& critic, const Vocab& vocab,
                                std::span<const EvaluatorExample> batch) {
    Tape tape;
    tape.recording = false;
    return double(critic_loss_t(tape, critic, vocab, batch)->data[0]);
}

struct CriticTrainConfig {
    int epochs = 30;
    int batch_size = 16;
    float lr = 3e-4f;
    uint64_t seed = 1;
    float grad_clip = 0.0f;
};

inline double dataset_critic_mse(const DecoderLM& critic, const Vocab& vocab,
                                 std::span<const EvaluatorExample> ds, int batch_size) {
    if (ds.empty()) return 0.0;
    double total = 0.0;
    for (size_t i = 0; i < ds.size(); i += size_t(batch_size)) {
        const size_t end = std::min(ds.size(), i + size_t(batch_size));
        total += critic_loss_value(critic, vocab, ds.subspan(i, end - i)) * double(end - i);
    }
    return total / double(ds.size());
}

// MSE regression of the critic against metric scores; deterministic given the
// seed, held-out MSE reported per epoch.
inline std::vector<EpochLoss> train_critic(DecoderLM& critic, const Vocab& vocab,
                                           std::span<const EvaluatorExample> train,
                                           std::span<const EvaluatorExample> valid,
                                           const CriticTrainConfig& cfg) {
    if (train.empty()) throw ContractViolation("train_critic: empty dataset");
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    acfg.grad_clip = cfg.grad_clip;
    AdamState adam;
    const auto params = critic.parameters();
    adam.init(params, acfg);

    const Rng base(cfg.seed);
    std::vector<EpochLoss> log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = base.fork("critic-shuffle", uint64_t(epoch));
        double loss_sum = 0.0;
        long batches = 0;
        for (const auto& batch_ids : epoch_batches(train.size(), cfg.batch_size, shuffle_rng)) {
            std::vector<EvaluatorExample> batch;
            for (const size_t id : batch_ids) batch.push_back(train[id]);
            critic.zero_grad();
            Tape tape;
            try {
                auto loss = critic_loss_t(tape, critic, vocab, batch);
                tape.backward(loss);
                loss_sum += double(loss->data[0]);
            } catch (const NumericError& e) {
                throw TrainingDiverged("critic epoch " + std::to_string(epoch) + ": " + e.what());
            }
            adam_step(params, adam);
            ++batches;
        }
        EpochLoss el;
        el.epoch = epoch;
        el.train_loss = batches ? loss_sum / double(batches) : 0.0;
        el.valid_loss = dataset_critic_mse(critic, vocab, valid, cfg.batch_size);
        log.push_back(el);
    }
    return log;
}

// Spearman rank correlation; used to sanity-check critic quality against true
// metric scores on held-out pairs.
inline double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2)
        throw ContractViolation("spearman: need two sequences of equal length >= 2");
    auto ranks = [](std::span<const double> v) {
        std::vector<size_t> order(v.size());
        std::iota(order.begin(), order.end(), size_t(0));
        std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        size_t i = 0;
        while (i < order.size()) {
            size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            const double mean_rank = 0.5 * double(i + j) + 1.0;  // ties share the mean rank
            for (size_t k = i; k <= j; ++k) r[order[k]] = mean_rank;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    double ma = 0, mb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= double(ra.size());
    mb /= double(rb.size());
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace ircoco
