#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "ircoco/corpus.hpp"
#include "ircoco/rng.hpp"

namespace ircoco {

// Deterministic bigram-automaton corpus: each sample opens with a random
// two-symbol seed, after which every token is a fixed function of the two
// before it. Any prefix of length >= 2 therefore has a unique continuation,
// and a small decoder can learn the transition table to (near-)perfect
// accuracy.
struct GrammarSpec {
    int samples = 2000;
    int alphabet = 40;
    int length = 26;  // tokens per sample, seed pair included
    uint64_t seed = 1234;
};

class GrammarCorpus {
public:
    explicit GrammarCorpus(const GrammarSpec& spec = {}) : spec_(spec) {
        Rng table_rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
        table_.resize(size_t(spec.alphabet) * size_t(spec.alphabet));
        for (auto& t : table_) t = int(table_rng.uniform_int(uint64_t(spec.alphabet)));
    }

    int next_symbol(int a, int b) const { return table_[size_t(a) * spec_.alphabet + b]; }

    std::string symbol(int s) const {
        std::string out = "w";
        if (s < 10) out += '0';
        out += std::to_string(s);
        return out;
    }

    std::vector<RawSample> samples() const {
        Rng rng(spec_.seed);
        std::vector<RawSample> out;
        out.reserve(size_t(spec_.samples));
        for (int i = 0; i < spec_.samples; ++i) {
            int a = int(rng.uniform_int(uint64_t(spec_.alphabet)));
            int b = int(rng.uniform_int(uint64_t(spec_.alphabet)));
            RawSample s;
            s.id = "grammar#" + std::to_string(i);
            s.tokens.push_back(symbol(a));
            s.tokens.push_back(symbol(b));
            for (int t = 2; t < spec_.length; ++t) {
                const int c = next_symbol(a, b);
                s.tokens.push_back(symbol(c));
                a = b;
                b = c;
            }
            out.push_back(std::move(s));
        }
        return out;
    }

    // Renders the corpus as a text file, one sample per line, so the standard
    // prepare pipeline (line mode) reproduces exactly these token streams.
    void write_text(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot open for writing: " + path);
        for (const auto& s : samples()) {
            for (size_t i = 0; i < s.tokens.size(); ++i) {
                if (i) out << ' ';
                out << s.tokens[i];
            }
            out << '\n';
        }
    }

    const GrammarSpec& spec() const { return spec_; }

private:
    GrammarSpec spec_;
    std::vector<int> table_;
};

// Splits grammar samples into completion examples with a deterministic rng.
inline std::vector<CompletionExample> grammar_examples(const GrammarCorpus& corpus, uint64_t seed) {
    Rng rng(seed);
    std::vector<CompletionExample> out;
    for (const auto& s : corpus.samples()) {
        auto ex = split_example(s, rng);
        if (ex) out.push_back(std::move(*ex));
    }
    return out;
}

// Evaluator-style regression set whose score is a deterministic function of
// the prefix: s = (len - min) / (max - min), linear in the prefix length.
inline std::vector<EvaluatorExample> length_score_dataset(int n, int min_len, int max_len,
                                                          int alphabet, uint64_t seed) {
    if (min_len < 1 || max_len <= min_len) throw ContractViolation("length_score_dataset: bad range");
    Rng rng(seed);
    std::vector<EvaluatorExample> out;
    out.reserve(size_t(n));
    for (int i = 0; i < n; ++i) {
        const int len = min_len + int(rng.uniform_int(uint64_t(max_len - min_len + 1)));
        EvaluatorExample ex;
        for (int t = 0; t < len; ++t)
            ex.prefix.push_back("w" + std::to_string(rng.uniform_int(uint64_t(alphabet))));
        ex.score = double(len - min_len) / double(max_len - min_len);
        out.push_back(std::move(ex));
    }
    return out;
}

// Regression set keyed by the final token: s = k / (alphabet - 1) where the
// prefix ends in symbol k.
inline std::vector<EvaluatorExample> last_token_score_dataset(int n, int len, int alphabet,
                                                              uint64_t seed) {
    Rng rng(seed);
    std::vector<EvaluatorExample> out;
    out.reserve(size_t(n));
    for (int i = 0; i < n; ++i) {
        EvaluatorExample ex;
        for (int t = 0; t < len - 1; ++t)
            ex.prefix.push_back("w" + std::to_string(rng.uniform_int(uint64_t(alphabet))));
        const int last = int(rng.uniform_int(uint64_t(alphabet)));
        ex.prefix.push_back("w" + std::to_string(last));
        ex.score = double(last) / double(alphabet - 1);
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace ircoco
