#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ircoco/critic.hpp"
#include "ircoco/error.hpp"
#include "ircoco/eval.hpp"
#include "ircoco/model.hpp"
#include "ircoco/sft.hpp"

namespace ircoco {

enum class RewardKind { immediate_critic, delayed, linear_attenuation, binary01 };

inline const char* reward_kind_name(RewardKind k) {
    switch (k) {
        case RewardKind::immediate_critic: return "immediate_critic";
        case RewardKind::delayed: return "delayed";
        case RewardKind::linear_attenuation: return "linear_attenuation";
        case RewardKind::binary01: return "binary01";
    }
    return "?";
}

struct RewardSchedule {
    RewardKind kind = RewardKind::immediate_critic;
    const DecoderLM* critic = nullptr;  // required unless kind == binary01
    bool la_increasing = false;         // flip the attenuation direction

    void validate(bool has_reference) const {
        const bool needs_critic = kind != RewardKind::binary01;
        if (needs_critic && critic == nullptr)
            throw ConfigError(std::string("reward schedule '") + reward_kind_name(kind) +
                              "' requires a critic");
        if (needs_critic && critic && critic->config.head != HeadKind::scalar)
            throw ConfigError("reward schedule: critic must have a scalar head");
        if (kind == RewardKind::binary01 && !has_reference)
            throw ConfigError("reward schedule 'binary01' requires the reference sequence");
    }
};

// One sampled completion: the generated elements (at most 10 tokens, the last
// of which may be </s>), log-probabilities under the sampling distribution,
// and one reward per element.
struct Trajectory {
    std::vector<int> prefix_ids;
    std::vector<int> tokens;
    std::vector<float> log_probs;
    std::vector<float> rewards;
    bool ended_with_eos = false;
};

namespace detail {

// Critic input is the prefix plus generated tokens with any trailing </s>
// removed; the critic never scores the marker itself.
inline float critic_value(const DecoderLM& critic, std::span<const int> prefix,
                          std::span<const int> generated) {
    while (!generated.empty() && generated.back() == tokens::kEos)
        generated = generated.subspan(0, generated.size() - 1);
    std::vector<int> ids(prefix.begin(), prefix.end());
    ids.insert(ids.end(), generated.begin(), generated.end());
    return float(critic_score(critic, ids));
}

}  // namespace detail

// Reward for step t (1-based) of a T-element trajectory. `generated` is the
// full element sequence; each schedule reads the slice it needs.
//   immediate_critic: Q(X; y_1..t), or Q(X; y_1..t-1) when y_t is </s>
//   delayed:          0 until t == T, then Q(X; y_1..T)
//   linear_attenuation: terminal value scaled by (T - t + 1) / T
//   binary01:         1 iff y_t equals the reference token at position t
inline float step_reward(const RewardSchedule& schedule, std::span<const int> prefix,
                         std::span<const int> generated, int t, int T,
                         std::span<const int> reference) {
    if (t < 1 || t > T || T != int(generated.size()))
        throw ContractViolation("step_reward: step index out of range");
    schedule.validate(!reference.empty());
    switch (schedule.kind) {
        case RewardKind::immediate_critic: {
            const int upto = generated[size_t(t) - 1] == tokens::kEos ? t - 1 : t;
            return detail::critic_value(*schedule.critic, prefix, generated.subspan(0, upto));
        }
        case RewardKind::delayed: {
            if (t < T) return 0.0f;
            return detail::critic_value(*schedule.critic, prefix, generated);
        }
        case RewardKind::linear_attenuation: {
            const float terminal = detail::critic_value(*schedule.critic, prefix, generated);
            const float frac = schedule.la_increasing ? float(t) / float(T)
                                                      : float(T - t + 1) / float(T);
            return terminal * frac;
        }
        case RewardKind::binary01: {
            if (t > int(reference.size())) return 0.0f;
            return generated[size_t(t) - 1] == reference[size_t(t) - 1] ? 1.0f : 0.0f;
        }
    }
    throw ConfigError("step_reward: unknown schedule");
}

inline void fill_rewards(const RewardSchedule& schedule, Trajectory& traj,
                         std::span<const int> reference) {
    const int T = int(traj.tokens.size());
    traj.rewards.resize(size_t(T));
    for (int t = 1; t <= T; ++t)
        traj.rewards[size_t(t) - 1] =
            step_reward(schedule, traj.prefix_ids, traj.tokens, t, T, reference);
}

// Samples one synthetic completion from the actor's policy: up to 10 tokens,
// stopping early at </s>; after 10 tokens one further draw may append the
// closing </s> (any other outcome truncates). Rewards are filled per step.
inline Trajectory sample_trajectory(const DecoderLM& actor, const RewardSchedule& schedule,
                                    std::span<const int> prefix_ids, std::span<const int> reference,
                                    float temperature, Rng& rng) {
    if (!(temperature > 0.0f)) throw ContractViolation("sample_trajectory: temperature must be > 0");
    if (1 + int(prefix_ids.size()) + kReferenceTokens + 1 > actor.config.max_len)
        throw ContractViolation("sample_trajectory: prefix too long for max_len");

    Trajectory traj;
    traj.prefix_ids.assign(prefix_ids.begin(), prefix_ids.end());
    std::vector<int> ids;
    ids.push_back(tokens::kBos);
    ids.insert(ids.end(), prefix_ids.begin(), prefix_ids.end());

    for (int step = 0; step < kReferenceTokens + 1; ++step) {
        Tape tape;
        tape.recording = false;
        auto logits = logits_last(tape, actor, ids);
        if (temperature != 1.0f) logits = mul(tape, logits, scalar_tensor(1.0f / temperature));
        auto probs = softmax_rows(tape, logits);
        const double u = rng.uniform();
        double acc = 0.0;
        int pick = probs->cols - 1;
        for (int j = 0; j < probs->cols; ++j) {
            acc += double(probs->data[j]);
            if (u < acc) {
                pick = j;
                break;
            }
        }
        const float logp = std::log(std::max(probs->data[pick], 1e-30f));
        if (pick == tokens::kEos) {
            traj.tokens.push_back(pick);
            traj.log_probs.push_back(logp);
            traj.ended_with_eos = true;
            break;
        }
        if (step == kReferenceTokens) break;  // horizon: only </s> may extend past 10 tokens
        traj.tokens.push_back(pick);
        traj.log_probs.push_back(logp);
        ids.push_back(pick);
    }
    fill_rewards(schedule, traj, reference);
    return traj;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct DrlOptions {
    bool per_step_rewards = true;  // false: weight every step by the summed return
    bool force_zero_rewards = false;
    std::optional<float> baseline;  // subtracted from each reward when set
};

// -sum_t r_t . log p(y_t | y_1..t-1, X), rewards treated as constants.
// Returns nullptr when every weight is zero: the term contributes nothing to
// the graph, so a zero-reward run is bit-identical to plain SFT.
inline TensorPtr drl_term(Tape& tape, const DecoderLM& actor, const Trajectory& traj,
                          const DrlOptions& opts = {}) {
    if (traj.tokens.empty()) throw ContractViolation("drl_loss: empty trajectory");
    if (traj.rewards.size() != traj.tokens.size())
        throw ContractViolation("drl_loss: rewards not filled");

    std::vector<float> weights(traj.tokens.size(), 0.0f);
    if (!opts.force_zero_rewards) {
        if (opts.per_step_rewards) {
            for (size_t i = 0; i < weights.size(); ++i) weights[i] = traj.rewards[i];
        } else {
            float ret = 0.0f;
            for (const float r : traj.rewards) ret += r;
            std::fill(weights.begin(), weights.end(), ret);
        }
        if (opts.baseline)
            for (auto& w : weights) w -= *opts.baseline;
    }
    bool any = false;
    for (const float w : weights) any = any || w != 0.0f;
    if (!any) return nullptr;

    std::vector<int> ids;
    ids.push_back(tokens::kBos);
    ids.insert(ids.end(), traj.prefix_ids.begin(), traj.prefix_ids.end());
    const size_t gen_start = ids.size();  // position of the first generated element
    for (const int tok : traj.tokens) ids.push_back(tok);

    // log p for generated element i lives at logits row gen_start - 1 + i.
    auto logits = logits_all(tape, actor, std::span<const int>(ids.data(), ids.size() - 1));
    const std::span<const int> targets(ids.data() + 1, ids.size() - 1);
    auto ce = cross_entropy_rows(tape, logits, targets);  // [len-1 x 1] of -log p
    auto w = make_tensor(ce->rows, 1);
    for (size_t i = 0; i < traj.tokens.size(); ++i) w->data[gen_start - 1 + i] = weights[i];
    auto weighted = mul(tape, ce, w);
    return matmul(tape, full_tensor(1, ce->rows, 1.0f), weighted);  // sum of r_t . (-log p_t)
}

inline double drl_loss_value(const DecoderLM& actor, const Trajectory& traj,
                             const DrlOptions& opts = {}) {
    Tape tape;
    tape.recording = false;
    auto term = drl_term(tape, actor, traj, opts);
    return term ? double(term->data[0]) : 0.0;
}

struct JointTerm {
    TensorPtr loss;
    double sft_part = 0.0;
    double drl_part = 0.0;
};

// L = L_sft + L_drl on one graph; a single backward yields the combined
// gradient. DRL parts are averaged over the batch.
inline JointTerm joint_loss(Tape& tape, const DecoderLM& actor, const SftBatch& batch,
                            std::span<const Trajectory> trajectories, const DrlOptions& opts = {}) {
    JointTerm out;
    auto sft = sft_term(tape, actor, batch);
    out.sft_part = double(sft.loss->data[0]);

    TensorPtr drl_total;
    for (const auto& traj : trajectories) {
        auto term = drl_term(tape, actor, traj, opts);
        if (term) drl_total = drl_total ? add(tape, drl_total, term) : term;
    }
    if (drl_total) {
        auto scaled = mul(tape, drl_total, scalar_tensor(1.0f / float(trajectories.size())));
        out.drl_part = double(scaled->data[0]);
        out.loss = add(tape, sft.loss, scaled);
    } else {
        out.loss = sft.loss;  // exactly the SFT graph; see DrlOptions
    }
    return out;
}

// ---------------------------------------------------------------------------
// Joint alignment (the full training loop)
// ---------------------------------------------------------------------------

enum class LossMode { joint, sft_only, drl_only };

struct AlignConfig {
    int epochs = 10;
    int batch_size = 2;
    float lr = 2e-5f;
    uint64_t seed = 1;
    float temperature = 1.0f;
    int samples_per_example = 1;
    float grad_clip = 0.0f;
    bool per_step_rewards = true;
    bool resample_each_epoch = true;   // fresh on-policy trajectories per epoch
    bool batch_mean_baseline = false;  // subtract the batch-mean reward
    bool force_zero_rewards = false;   // test hook: zero every reward
    LossMode loss_mode = LossMode::joint;
    size_t eval_subset = 0;            // 0 = evaluate the full held-out set per epoch
};

struct AlignEpoch {
    int epoch = 0;
    double sft_loss = 0.0;
    double drl_loss = 0.0;
    double edit_sim = 0.0;
    double em = 0.0;
    double bleu4 = 0.0;
};

// One joint update per batch: draw a trajectory per example, compute
// L_sft + L_drl, backpropagate once, step the optimizer. The critic stays
// frozen throughout. Batch order is seed-deterministic and shares its stream
// with train_sft, so a zero-reward run walks the same batches.
inline std::vector<AlignEpoch> train_ircoco(DecoderLM& actor, const DecoderLM* critic,
                                            std::span<const CompletionExample> train,
                                            std::span<const CompletionExample> heldout,
                                            const Vocab& vocab, RewardKind kind,
                                            const AlignConfig& cfg,
                                            const StepCallback& on_step = nullptr) {
    if (train.empty()) throw ContractViolation("train_ircoco: empty dataset");
    if (cfg.samples_per_example < 1)
        throw ContractViolation("train_ircoco: samples_per_example must be >= 1");
    RewardSchedule schedule;
    schedule.kind = kind;
    schedule.critic = critic;
    schedule.validate(true);

    std::vector<SftRow> rows;
    std::vector<std::vector<int>> prefix_ids, reference_ids;
    rows.reserve(train.size());
    for (const auto& ex : train) {
        rows.push_back(make_sft_row(vocab, ex, actor.config));
        prefix_ids.push_back(vocab.encode(ex.prefix));
        reference_ids.push_back(vocab.encode(ex.reference));
    }

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    acfg.grad_clip = cfg.grad_clip;
    AdamState adam;
    const auto params = actor.parameters();
    adam.init(params, acfg);

    DrlOptions opts;
    opts.per_step_rewards = cfg.per_step_rewards;
    opts.force_zero_rewards = cfg.force_zero_rewards;

    std::vector<std::vector<Trajectory>> cached(train.size());
    const Rng base(cfg.seed);
    std::vector<AlignEpoch> log;
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = base.fork("train-shuffle", uint64_t(epoch));
        Rng sample_rng = base.fork("sample", cfg.resample_each_epoch ? uint64_t(epoch) : 0);
        double sft_sum = 0.0, drl_sum = 0.0;
        long batches = 0;
        for (const auto& batch_ids : epoch_batches(rows.size(), cfg.batch_size, shuffle_rng)) {
            std::vector<SftRow> brows;
            std::vector<Trajectory> trajs;
            for (const size_t id : batch_ids) {
                brows.push_back(rows[id]);
                if (cfg.loss_mode == LossMode::sft_only) continue;
                if (cfg.resample_each_epoch || cached[id].empty()) {
                    std::vector<Trajectory> fresh;
                    for (int s = 0; s < cfg.samples_per_example; ++s)
                        fresh.push_back(sample_trajectory(actor, schedule, prefix_ids[id],
                                                          reference_ids[id], cfg.temperature,
                                                          sample_rng));
                    if (!cfg.resample_each_epoch) cached[id] = fresh;
                    for (auto& t : fresh) trajs.push_back(std::move(t));
                } else {
                    for (const auto& t : cached[id]) trajs.push_back(t);
                }
            }
            if (opts.force_zero_rewards)
                for (auto& t : trajs) std::fill(t.rewards.begin(), t.rewards.end(), 0.0f);
            if (cfg.batch_mean_baseline && !trajs.empty()) {
                double sum = 0.0;
                long n = 0;
                for (const auto& t : trajs)
                    for (const float r : t.rewards) {
                        sum += r;
                        ++n;
                    }
                opts.baseline = n ? std::optional<float>(float(sum / double(n))) : std::nullopt;
            }

            SftBatch batch = make_batch(std::move(brows));
            actor.zero_grad();
            Tape tape;
            try {
                if (cfg.loss_mode == LossMode::drl_only) {
                    TensorPtr total;
                    for (const auto& traj : trajs) {
                        auto term = drl_term(tape, actor, traj, opts);
                        if (term) total = total ? add(tape, total, term) : term;
                    }
                    if (total) {
                        auto loss = mul(tape, total, scalar_tensor(1.0f / float(trajs.size())));
                        tape.backward(loss);
                        drl_sum += double(loss->data[0]);
                    }
                    // A batch whose every weight is zero has an exactly-zero
                    // gradient; the optimizer still applies its momentum step.
                    adam_step(params, adam);
                } else {
                    const auto joint = joint_loss(tape, actor, batch, trajs, opts);
                    tape.backward(joint.loss);
                    sft_sum += joint.sft_part;
                    drl_sum += joint.drl_part;
                    adam_step(params, adam);
                }
            } catch (const NumericError& e) {
                throw TrainingDiverged("align epoch " + std::to_string(epoch) + " batch " +
                                       std::to_string(batches) + ": " + e.what());
            }
            ++batches;
            ++step;
            if (on_step) on_step(step, actor);
        }

        AlignEpoch ae;
        ae.epoch = epoch;
        ae.sft_loss = batches ? sft_sum / double(batches) : 0.0;
        ae.drl_loss = batches ? drl_sum / double(batches) : 0.0;
        if (!heldout.empty()) {
            const size_t n = cfg.eval_subset ? std::min(cfg.eval_subset, heldout.size())
                                             : heldout.size();
            const auto rep = evaluate_model(actor, vocab, heldout.subspan(0, n));
            ae.edit_sim = rep.edit_sim;
            ae.em = rep.em;
            ae.bleu4 = rep.bleu4;
        }
        log.push_back(ae);
    }
    return log;
}

}  // namespace ircoco
