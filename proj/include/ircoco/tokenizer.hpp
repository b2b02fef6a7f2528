#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ircoco/vocab.hpp"

namespace ircoco {

struct TokenizeResult {
    std::vector<std::string> tokens;
    bool unterminated_string = false;
};

namespace detail {

inline bool ident_start(char c) { return std::isalpha(uint8_t(c)) || c == '_'; }
inline bool ident_char(char c) { return std::isalnum(uint8_t(c)) || c == '_'; }

// Multi-char operators, longest first for maximal munch.
inline const std::vector<std::string>& operator_table() {
    static const std::vector<std::string> ops = {
        "<<=", ">>=", "...", "->*", "<=>", "===", "!==", "**=", "//=",
        "::", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
        "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "**", "//",
    };
    return ops;
}

}  // namespace detail

// Language-lite lexer: identifiers, numeric literals, quoted strings (quotes
// kept), operators by maximal munch, one token per punctuation mark, <EOL>
// for newlines, other whitespace dropped.
inline TokenizeResult tokenize_ex(std::string_view source) {
    TokenizeResult out;
    const size_t n = source.size();
    size_t i = 0;
    while (i < n) {
        const char c = source[i];
        if (c == '\n') {
            out.tokens.emplace_back(tokens::kEol);
            ++i;
            continue;
        }
        if (c == '\r' || c == '\t' || c == ' ' || c == '\v' || c == '\f') {
            ++i;
            continue;
        }
        if (detail::ident_start(c)) {
            size_t j = i + 1;
            while (j < n && detail::ident_char(source[j])) ++j;
            out.tokens.emplace_back(source.substr(i, j - i));
            i = j;
            continue;
        }
        if (std::isdigit(uint8_t(c))) {
            size_t j = i + 1;
            while (j < n) {
                const char d = source[j];
                if (std::isalnum(uint8_t(d)) || d == '.' || d == '_') {
                    ++j;
                } else if ((d == '+' || d == '-') && (source[j - 1] == 'e' || source[j - 1] == 'E') &&
                           j + 1 < n && std::isdigit(uint8_t(source[j + 1]))) {
                    ++j;  // exponent sign, e.g. 1e-5
                } else {
                    break;
                }
            }
            out.tokens.emplace_back(source.substr(i, j - i));
            i = j;
            continue;
        }
        if (c == '"' || c == '\'') {
            const char quote = c;
            size_t j = i + 1;
            bool closed = false;
            while (j < n && source[j] != '\n') {
                if (source[j] == '\\' && j + 1 < n && source[j + 1] != '\n') {
                    j += 2;
                    continue;
                }
                if (source[j] == quote) {
                    closed = true;
                    ++j;
                    break;
                }
                ++j;
            }
            if (!closed) out.unterminated_string = true;  // consume to end of line
            out.tokens.emplace_back(source.substr(i, j - i));
            i = j;
            continue;
        }
        // Operators: longest match from the table, else the single character.
        size_t matched = 0;
        for (const auto& op : detail::operator_table()) {
            if (op.size() > matched && source.substr(i, op.size()) == op) matched = op.size();
        }
        if (matched == 0) matched = 1;
        out.tokens.emplace_back(source.substr(i, matched));
        i += matched;
    }
    return out;
}

inline std::vector<std::string> tokenize(std::string_view source) {
    return tokenize_ex(source).tokens;
}

// ---------------------------------------------------------------------------
// Literal normalization
// ---------------------------------------------------------------------------

inline bool is_string_literal(const std::string& tok) {
    return tok.size() >= 2 && (tok.front() == '"' || tok.front() == '\'');
}

inline bool is_numeric_literal(const std::string& tok) {
    return !tok.empty() && std::isdigit(uint8_t(tok.front()));
}

inline bool is_normalized_literal(const std::string& tok) {
    return tok.rfind("<STR_LIT", 0) == 0 || tok.rfind("<NUM_LIT", 0) == 0;
}

// Inner content of a string literal (quotes and trailing-newline-truncation aside).
inline std::string string_literal_content(const std::string& tok) {
    if (tok.size() < 2) return {};
    const char quote = tok.front();
    size_t end = tok.size();
    if (tok.back() == quote && tok.size() >= 2) end = tok.size() - 1;
    return tok.substr(1, end - 1);
}

struct LiteralTables {
    std::vector<std::string> top_strings;  // ranked, most frequent first
    std::vector<std::string> top_numbers;

    bool has_string(const std::string& content) const {
        return std::find(top_strings.begin(), top_strings.end(), content) != top_strings.end();
    }
    bool has_number(const std::string& content) const {
        return std::find(top_numbers.begin(), top_numbers.end(), content) != top_numbers.end();
    }
};

// Frequency tables over the training split only: the most common string
// contents and numeric spellings, ties broken lexicographically.
inline LiteralTables compute_literal_tables(std::span<const std::vector<std::string>> train_streams,
                                            size_t max_strings = 200, size_t max_numbers = 30) {
    std::map<std::string, long> strs, nums;
    for (const auto& stream : train_streams)
        for (const auto& tok : stream) {
            if (is_string_literal(tok)) strs[string_literal_content(tok)] += 1;
            else if (is_numeric_literal(tok)) nums[tok] += 1;
        }
    auto rank = [](std::map<std::string, long>& freq, size_t cap) {
        std::vector<std::pair<std::string, long>> v(freq.begin(), freq.end());
        std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        std::vector<std::string> out;
        for (size_t i = 0; i < v.size() && i < cap; ++i) out.push_back(v[i].first);
        return out;
    };
    return LiteralTables{rank(strs, max_strings), rank(nums, max_numbers)};
}

// Rewrites literals in place: top strings become <STR_LIT:content>, the rest
// <STR_LIT>; likewise <NUM_LIT:...>/<NUM_LIT> for numbers. Idempotent.
inline std::vector<std::string> normalize_literals(std::vector<std::string> toks,
                                                   const LiteralTables& tables) {
    for (auto& tok : toks) {
        if (is_normalized_literal(tok)) continue;
        if (is_string_literal(tok)) {
            const std::string content = string_literal_content(tok);
            tok = tables.has_string(content) ? "<STR_LIT:" + content + ">" : "<STR_LIT>";
        } else if (is_numeric_literal(tok)) {
            tok = tables.has_number(tok) ? "<NUM_LIT:" + tok + ">" : "<NUM_LIT>";
        }
    }
    return toks;
}

}  // namespace ircoco
