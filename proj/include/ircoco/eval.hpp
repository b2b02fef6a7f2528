#pragma once

#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "ircoco/corpus.hpp"
#include "ircoco/error.hpp"
#include "ircoco/metrics.hpp"
#include "ircoco/model.hpp"
#include "ircoco/vocab.hpp"

namespace ircoco {

// Greedy evaluation: decode up to 10 tokens per example and aggregate
// Edit-Sim / EM / BLEU-4 overall and per length bucket. References are
// canonicalized through the vocabulary (the actor can only emit vocabulary
// tokens, so both sides are compared in the same rendering).
inline MetricReport evaluate_model(const DecoderLM& actor, const Vocab& vocab,
                                   std::span<const CompletionExample> test,
                                   const std::unordered_set<std::string>* train_ids = nullptr) {
    if (test.empty()) throw ContractViolation("evaluate: empty test set");
    if (train_ids)
        for (const auto& ex : test)
            if (train_ids->count(ex.id))
                throw ContractViolation("evaluate: test example '" + ex.id +
                                        "' overlaps the training split");
    MetricAccumulator acc;
    for (const auto& ex : test) {
        const auto prefix_ids = vocab.encode(ex.prefix);
        const auto out = decode(actor, prefix_ids, DecodeMode::greedy, 1.0f, kReferenceTokens);
        const auto candidate = vocab.decode(out.tokens);
        const auto reference = vocab.decode(vocab.encode(ex.reference));
        acc.add(candidate, reference);
    }
    return acc.report();
}

inline nlohmann::json metric_report_json(const MetricReport& r) {
    nlohmann::json buckets = nlohmann::json::array();
    for (int k = 0; k < kLengthBuckets; ++k) {
        const auto& b = r.per_length[k];
        nlohmann::json jb{{"token_count", k + 1},
                          {"count", b.count},
                          {"edit_sim", b.edit_sim},
                          {"em", b.em}};
        if (b.bleu4) jb["bleu4"] = *b.bleu4;
        buckets.push_back(jb);
    }
    return nlohmann::json{{"count", r.count},
                          {"edit_sim", r.edit_sim},
                          {"em", r.em},
                          {"bleu4", r.bleu4},
                          {"per_length", buckets}};
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.count = j.at("count").get<size_t>();
    r.edit_sim = j.at("edit_sim").get<double>();
    r.em = j.at("em").get<double>();
    r.bleu4 = j.at("bleu4").get<double>();
    for (const auto& jb : j.at("per_length")) {
        const int k = jb.at("token_count").get<int>() - 1;
        if (k < 0 || k >= kLengthBuckets) throw ParseError("metric report: bad token_count");
        auto& b = r.per_length[k];
        b.count = jb.at("count").get<size_t>();
        b.edit_sim = jb.at("edit_sim").get<double>();
        b.em = jb.at("em").get<double>();
        if (jb.contains("bleu4")) b.bleu4 = jb.at("bleu4").get<double>();
    }
    return r;
}

}  // namespace ircoco
