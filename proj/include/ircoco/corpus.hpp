#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ircoco/error.hpp"
#include "ircoco/rng.hpp"
#include "ircoco/tokenizer.hpp"
#include "ircoco/vocab.hpp"

namespace ircoco {

inline constexpr int kReferenceTokens = 10;
inline constexpr int kMinPrefixTokens = 2;
inline constexpr int kMinSampleTokens = kMinPrefixTokens + kReferenceTokens;

struct RawSample {
    std::string id;
    std::vector<std::string> tokens;
};

struct CompletionExample {
    std::string id;
    std::vector<std::string> prefix;
    std::vector<std::string> reference;  // exactly kReferenceTokens
};

struct StatsReport {
    size_t examples = 0;
    double mean_prefix_tokens = 0.0;
    double mean_reference_tokens = 0.0;
    double mean_lines = 0.0;
    size_t skipped = 0;
};

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

// Cuts at a fixed point: prefix = tokens[0, split), reference = the next 10
// tokens exactly; anything beyond the reference is dropped.
inline CompletionExample split_example_at(const RawSample& sample, int split) {
    const int n = int(sample.tokens.size());
    if (n < kMinSampleTokens)
        throw ContractViolation("split_example: sample shorter than " +
                                std::to_string(kMinSampleTokens) + " tokens");
    if (split < kMinPrefixTokens || split > n - kReferenceTokens)
        throw ContractViolation("split_example: split point out of range");
    CompletionExample ex;
    ex.id = sample.id;
    ex.prefix.assign(sample.tokens.begin(), sample.tokens.begin() + split);
    ex.reference.assign(sample.tokens.begin() + split,
                        sample.tokens.begin() + split + kReferenceTokens);
    return ex;
}

// Uniform split point over [2, n - 10]. Returns nullopt (the skip signal)
// for samples too short to cut.
inline std::optional<CompletionExample> split_example(const RawSample& sample, Rng& rng) {
    const int n = int(sample.tokens.size());
    if (n < kMinSampleTokens) return std::nullopt;
    const int lo = kMinPrefixTokens, hi = n - kReferenceTokens;
    const int split = lo + int(rng.uniform_int(uint64_t(hi - lo + 1)));
    return split_example_at(sample, split);
}

inline StatsReport corpus_stats(std::span<const CompletionExample> examples, size_t skipped = 0) {
    if (examples.empty()) throw ContractViolation("corpus_stats: empty dataset");
    StatsReport r;
    r.examples = examples.size();
    r.skipped = skipped;
    double p = 0, ref = 0, lines = 0;
    for (const auto& ex : examples) {
        p += double(ex.prefix.size());
        ref += double(ex.reference.size());
        long eols = 0;
        for (const auto& t : ex.prefix)
            if (t == tokens::kEol) ++eols;
        lines += double(eols + 1);
    }
    r.mean_prefix_tokens = p / double(r.examples);
    r.mean_reference_tokens = ref / double(r.examples);
    r.mean_lines = lines / double(r.examples);
    return r;
}

// ---------------------------------------------------------------------------
// Dataset files: one JSON object per line.
// ---------------------------------------------------------------------------

inline void write_dataset(std::span<const CompletionExample> examples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    for (const auto& ex : examples) {
        nlohmann::json j;
        j["id"] = ex.id;
        j["prefix"] = ex.prefix;
        j["reference"] = ex.reference;
        out << j.dump() << "\n";
    }
}

inline std::vector<CompletionExample> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open for reading: " + path);
    std::vector<CompletionExample> out;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("prefix") ||
            !j.contains("reference"))
            throw ParseError(path + ":" + std::to_string(lineno) + ": malformed dataset record");
        CompletionExample ex;
        try {
            ex.id = j.at("id").get<std::string>();
            ex.prefix = j.at("prefix").get<std::vector<std::string>>();
            ex.reference = j.at("reference").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception&) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": malformed dataset record");
        }
        out.push_back(std::move(ex));
    }
    return out;
}

// Evaluator records: {"prefix": [...], "score": s}.
struct EvaluatorExample {
    std::vector<std::string> prefix;
    double score = 0.0;
};

inline void write_evaluator_dataset(std::span<const EvaluatorExample> examples,
                                    const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    for (const auto& ex : examples) {
        nlohmann::json j;
        j["prefix"] = ex.prefix;
        j["score"] = ex.score;
        out << j.dump() << "\n";
    }
}

inline std::vector<EvaluatorExample> read_evaluator_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open for reading: " + path);
    std::vector<EvaluatorExample> out;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("prefix") || !j.contains("score"))
            throw ParseError(path + ":" + std::to_string(lineno) + ": malformed evaluator record");
        EvaluatorExample ex;
        try {
            ex.prefix = j.at("prefix").get<std::vector<std::string>>();
            ex.score = j.at("score").get<double>();
        } catch (const nlohmann::json::exception&) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": malformed evaluator record");
        }
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Raw ingestion: a directory tree filtered by extension, chopped into
// window-sized samples (or one sample per line for line-structured corpora).
// ---------------------------------------------------------------------------

struct IngestConfig {
    std::vector<std::string> extensions = {".hpp", ".h", ".cpp", ".cc", ".py", ".java", ".txt"};
    int window_min = 24;   // tokens per sample, inclusive
    int window_max = 44;
    bool samples_per_line = false;  // one RawSample per input line
    size_t max_samples = 0;         // 0 = unlimited
};

inline std::vector<std::filesystem::path> list_source_files(const std::string& root,
                                                            std::span<const std::string> exts) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    if (!fs::exists(root)) throw Error("corpus path does not exist: " + root);
    if (fs::is_regular_file(root)) {
        files.push_back(root);
    } else {
        for (const auto& entry : fs::recursive_directory_iterator(root)) {
            if (!entry.is_regular_file()) continue;
            const std::string ext = entry.path().extension().string();
            for (const auto& want : exts)
                if (ext == want) {
                    files.push_back(entry.path());
                    break;
                }
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Deterministic: window lengths come from a per-file stream keyed by the file
// name, so results do not depend on directory enumeration order.
inline std::vector<RawSample> ingest_corpus(std::span<const std::string> roots,
                                            const IngestConfig& cfg, const Rng& base_rng) {
    std::vector<RawSample> samples;
    for (const auto& root : roots) {
        for (const auto& file : list_source_files(root, cfg.extensions)) {
            const std::string name = file.filename().string();
            if (cfg.samples_per_line) {
                std::ifstream in(file, std::ios::binary);
                std::string line;
                long lineno = 0;
                while (std::getline(in, line)) {
                    ++lineno;
                    auto toks = tokenize(line);
                    if (toks.empty()) continue;
                    samples.push_back({name + "#L" + std::to_string(lineno), std::move(toks)});
                }
            } else {
                const auto toks = tokenize(read_file(file));
                Rng wrng = base_rng.fork("window", fnv1a64(name));
                size_t pos = 0;
                while (pos + size_t(cfg.window_min) <= toks.size()) {
                    const size_t span = size_t(cfg.window_min) +
                                        wrng.uniform_int(uint64_t(cfg.window_max - cfg.window_min + 1));
                    const size_t len = std::min(span, toks.size() - pos);
                    if (int(len) < kMinSampleTokens) break;
                    RawSample s;
                    s.id = name + "#" + std::to_string(pos);
                    s.tokens.assign(toks.begin() + pos, toks.begin() + pos + len);
                    samples.push_back(std::move(s));
                    pos += len;
                }
            }
            if (cfg.max_samples && samples.size() >= cfg.max_samples) {
                samples.resize(cfg.max_samples);
                return samples;
            }
        }
    }
    return samples;
}

}  // namespace ircoco
