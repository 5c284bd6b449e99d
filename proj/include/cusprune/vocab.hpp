#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cusprune {

using TokenId = std::uint32_t;

// Token strings indexed by id. Entries of the form `<0xNN>` are byte-fallback
// tokens: they stand for the raw byte NN when no longer entry matches.
class Vocab {
  public:
    Vocab() = default;
    explicit Vocab(std::vector<std::string> tokens);

    // One token per byte value 0..255, id == byte.
    static Vocab byte_level();

    std::size_t size() const { return tokens_.size(); }
    bool empty() const { return tokens_.empty(); }
    const std::string& token(TokenId id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::optional<TokenId> find(std::string_view piece) const;
    // Id used for a byte that no vocab entry covers: the `<0xNN>` entry when
    // present, otherwise id 0.
    TokenId byte_fallback(unsigned char byte) const;
    std::size_t max_token_bytes() const { return max_len_; }

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    std::size_t max_len_ = 0;
};

// vocab.txt line codec: bytes below 0x20, 0x7F and the backslash are written
// as `\xNN`; everything else is copied through.
std::string escape_vocab_line(std::string_view token);
std::string unescape_vocab_line(std::string_view line);

}  // namespace cusprune
