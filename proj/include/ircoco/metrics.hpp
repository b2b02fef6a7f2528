#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ircoco/vocab.hpp"

namespace ircoco {

// Minimal insert/delete/substitute count, two-row DP.
template <typename Seq>
inline long levenshtein(const Seq& a, const Seq& b) {
    const size_t n = a.size(), m = b.size();
    if (n == 0) return long(m);
    if (m == 0) return long(n);
    std::vector<long> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = long(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = long(i);
        for (size_t j = 1; j <= m; ++j) {
            const long sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

inline std::string detokenize(std::span<const std::string> toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += toks[i];
    }
    return out;
}

// Character-level edit similarity over space-joined tokens: 1 - d/max_len.
// Both empty counts as a perfect match.
inline double edit_sim(std::span<const std::string> candidate,
                       std::span<const std::string> reference) {
    const std::string c = detokenize(candidate);
    const std::string r = detokenize(reference);
    const size_t maxlen = std::max(c.size(), r.size());
    if (maxlen == 0) return 1.0;
    return 1.0 - double(levenshtein(c, r)) / double(maxlen);
}

// BLEU-4 with uniform weights, add-one smoothing on each modified precision's
// numerator and denominator, and brevity penalty exp(1 - |ref|/|cand|) when
// the candidate is shorter. An empty candidate scores 0.
inline double bleu4(std::span<const std::string> candidate,
                    std::span<const std::string> reference) {
    if (candidate.empty()) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        std::map<std::vector<std::string>, long> ref_counts;
        if (int(reference.size()) >= n)
            for (size_t i = 0; i + n <= reference.size(); ++i)
                ref_counts[std::vector<std::string>(reference.begin() + i, reference.begin() + i + n)] += 1;
        long matched = 0, total = 0;
        std::map<std::vector<std::string>, long> used;
        if (int(candidate.size()) >= n)
            for (size_t i = 0; i + n <= candidate.size(); ++i) {
                std::vector<std::string> gram(candidate.begin() + i, candidate.begin() + i + n);
                ++total;
                const auto it = ref_counts.find(gram);
                if (it != ref_counts.end() && used[gram] < it->second) {
                    ++used[gram];
                    ++matched;
                }
            }
        log_sum += 0.25 * std::log(double(matched + 1) / double(total + 1));
    }
    double bp = 1.0;
    if (candidate.size() < reference.size())
        bp = std::exp(1.0 - double(reference.size()) / double(candidate.size()));
    return bp * std::exp(log_sum);
}

// True iff the token sequences are identical, ignoring a trailing
// end-of-sequence marker on either side.
inline bool exact_match(std::span<const std::string> candidate,
                        std::span<const std::string> reference) {
    auto trimmed = [](std::span<const std::string> s) {
        while (!s.empty() && s.back() == tokens::kEosStr) s = s.subspan(0, s.size() - 1);
        return s;
    };
    const auto c = trimmed(candidate);
    const auto r = trimmed(reference);
    return c.size() == r.size() && std::equal(c.begin(), c.end(), r.begin());
}

// ---------------------------------------------------------------------------
// Aggregated reports
// ---------------------------------------------------------------------------

inline constexpr int kLengthBuckets = 10;
inline constexpr int kBleuMinTokens = 4;  // BLEU-4 is not reported below this

struct BucketScores {
    size_t count = 0;
    double edit_sim = 0.0;              // percentages
    double em = 0.0;
    std::optional<double> bleu4;        // absent for buckets 1..3
};

struct MetricReport {
    size_t count = 0;
    double edit_sim = 0.0;  // percentages in [0, 100]
    double em = 0.0;
    double bleu4 = 0.0;
    // Buckets 1..10 keyed by generated-completion token count (clamped to
    // [1, 10]); they partition the evaluated set.
    std::array<BucketScores, kLengthBuckets> per_length{};
};

class MetricAccumulator {
public:
    void add(std::span<const std::string> candidate, std::span<const std::string> reference) {
        const double es = edit_sim(candidate, reference);
        const double bl = bleu4(candidate, reference);
        const bool em = exact_match(candidate, reference);
        es_ += es;
        bleu_ += bl;
        em_ += em ? 1.0 : 0.0;
        ++count_;
        const int bucket = std::clamp(int(candidate.size()), 1, kLengthBuckets);
        auto& b = sums_[bucket - 1];
        b.count += 1;
        b.es += es;
        b.em += em ? 1.0 : 0.0;
        b.bleu += bl;
    }

    MetricReport report() const {
        if (count_ == 0) throw ContractViolation("metrics: empty evaluation set");
        MetricReport r;
        r.count = count_;
        r.edit_sim = 100.0 * es_ / double(count_);
        r.em = 100.0 * em_ / double(count_);
        r.bleu4 = 100.0 * bleu_ / double(count_);
        for (int k = 0; k < kLengthBuckets; ++k) {
            const auto& b = sums_[k];
            auto& out = r.per_length[k];
            out.count = b.count;
            if (b.count) {
                out.edit_sim = 100.0 * b.es / double(b.count);
                out.em = 100.0 * b.em / double(b.count);
            }
            if (k + 1 >= kBleuMinTokens && b.count)
                out.bleu4 = 100.0 * b.bleu / double(b.count);
        }
        return r;
    }

private:
    struct Sums {
        size_t count = 0;
        double es = 0.0, em = 0.0, bleu = 0.0;
    };
    size_t count_ = 0;
    double es_ = 0.0, em_ = 0.0, bleu_ = 0.0;
    std::array<Sums, kLengthBuckets> sums_{};
};

}  // namespace ircoco
