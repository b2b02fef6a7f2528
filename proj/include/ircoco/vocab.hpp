#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ircoco/error.hpp"

namespace ircoco {

namespace tokens {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr const char* kPadStr = "<pad>";
inline constexpr const char* kBosStr = "<s>";
inline constexpr const char* kEosStr = "</s>";
inline constexpr const char* kUnkStr = "<unk>";
inline constexpr const char* kEol = "<EOL>";
}  // namespace tokens

class Vocab {
public:
    Vocab() {
        for (const char* s : {tokens::kPadStr, tokens::kBosStr, tokens::kEosStr, tokens::kUnkStr})
            push(s);
    }

    // Tokens with frequency >= min_freq, ordered by descending frequency then
    // lexicographically, reserved entries first, truncated to cap entries total.
    static Vocab build(std::span<const std::vector<std::string>> streams, int min_freq,
                       size_t cap = 8192) {
        if (min_freq < 1) throw ContractViolation("build_vocab: min_freq must be >= 1");
        std::map<std::string, long> freq;
        size_t total = 0;
        for (const auto& stream : streams) {
            total += stream.size();
            for (const auto& tok : stream) freq[tok] += 1;
        }
        if (total == 0) throw ContractViolation("build_vocab: empty corpus");
        std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocab v;
        for (const auto& [tok, count] : ranked) {
            if (count < min_freq) break;
            if (v.size() >= cap) break;
            if (v.token_to_id_.count(tok)) continue;  // a reserved token seen in data
            v.push(tok);
        }
        return v;
    }

    int encode(const std::string& tok) const {
        const auto it = token_to_id_.find(tok);
        return it == token_to_id_.end() ? tokens::kUnk : it->second;
    }

    std::vector<int> encode(std::span<const std::string> toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(encode(t));
        return out;
    }

    const std::string& decode(int id) const {
        if (id < 0 || id >= int(id_to_token_.size()))
            throw IndexError("vocab: id " + std::to_string(id) + " out of range");
        return id_to_token_[id];
    }

    std::vector<std::string> decode(std::span<const int> ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (const int id : ids) out.push_back(decode(id));
        return out;
    }

    size_t size() const { return id_to_token_.size(); }
    const std::vector<std::string>& items() const { return id_to_token_; }

    static Vocab from_items(std::span<const std::string> items) {
        if (items.size() < 4 || items[0] != tokens::kPadStr || items[1] != tokens::kBosStr ||
            items[2] != tokens::kEosStr || items[3] != tokens::kUnkStr)
            throw FormatError("vocab file does not start with the reserved tokens");
        Vocab v;
        for (size_t i = 4; i < items.size(); ++i) v.push(items[i]);
        return v;
    }

private:
    void push(std::string tok) {
        token_to_id_.emplace(tok, int(id_to_token_.size()));
        id_to_token_.push_back(std::move(tok));
    }

    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

}  // namespace ircoco
