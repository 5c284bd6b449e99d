#include "cusprune/vocab.hpp"

#include <algorithm>
#include <cstdio>
#include <string>

#include "cusprune/error.hpp"

namespace cusprune {

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty()) throw ValidationError("empty vocab entry at id " + std::to_string(i));
        // First occurrence wins so ids stay stable under duplicate entries.
        index_.emplace(tokens_[i], static_cast<TokenId>(i));
        max_len_ = std::max(max_len_, tokens_[i].size());
    }
}

Vocab Vocab::byte_level() {
    std::vector<std::string> tokens;
    tokens.reserve(256);
    for (int b = 0; b < 256; ++b) tokens.emplace_back(1, static_cast<char>(b));
    return Vocab(std::move(tokens));
}

std::optional<TokenId> Vocab::find(std::string_view piece) const {
    auto it = index_.find(std::string(piece));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

TokenId Vocab::byte_fallback(unsigned char byte) const {
    char name[8];
    std::snprintf(name, sizeof(name), "<0x%02X>", byte);
    return find(name).value_or(0);
}

std::string escape_vocab_line(std::string_view token) {
    std::string out;
    out.reserve(token.size());
    for (char ch : token) {
        const auto b = static_cast<unsigned char>(ch);
        if (b < 0x20 || b == 0x7F || b == '\\') {
            char buf[5];
            std::snprintf(buf, sizeof(buf), "\\x%02X", b);
            out += buf;
        } else {
            out += ch;
        }
    }
    return out;
}

std::string unescape_vocab_line(std::string_view line) {
    std::string out;
    out.reserve(line.size());
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] != '\\') {
            out += line[i];
            continue;
        }
        if (i + 3 >= line.size()) {
            throw ValidationError("truncated escape in vocab line");
        }
        if (line[i + 1] != 'x') throw ValidationError("bad escape in vocab line");
        const std::string hex(line.substr(i + 2, 2));
        std::size_t used = 0;
        int value = 0;
        try {
            value = std::stoi(hex, &used, 16);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != 2) throw ValidationError("bad escape in vocab line");
        out += static_cast<char>(value);
        i += 3;
    }
    return out;
}

}  // namespace cusprune
