#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "cusprune/bundle.hpp"
#include "cusprune/corpus.hpp"
#include "cusprune/toy.hpp"

namespace cusprune::testing {

// Scratch directory removed on destruction.
class TempDir {
  public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("cusprune-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

inline const std::string kAlphaA = "abcdefghijklmnop";
inline const std::string kAlphaB = "ABCDEFGHIJKLMNOP";

inline Vocab two_language_vocab() { return char_vocab(kAlphaA + kAlphaB); }

inline Bundle random_bundle(const ToyShape& shape, std::uint64_t seed) {
    const ModelConfig config = toy_config(shape);
    Vocab vocab = shape.vocab_size == 32 ? two_language_vocab() : Vocab::byte_level();
    return make_bundle(config, random_weights(config, seed), std::move(vocab));
}

// Documents in languages "A" and "B", each spread over two domains and two tasks.
inline std::vector<Document> two_language_docs(const SyntheticLanguage& a, const SyntheticLanguage& b,
                                               std::size_t per_language, std::size_t length,
                                               const std::string& prefix, Rng& rng) {
    const std::vector<std::string> domains{"news", "medical"};
    const std::vector<std::string> tasks{"qa", "summary"};
    auto docs = synthetic_documents(a, "A", domains, tasks, per_language, length, prefix + "a", rng);
    auto more = synthetic_documents(b, "B", domains, tasks, per_language, length, prefix + "b", rng);
    docs.insert(docs.end(), more.begin(), more.end());
    return docs;
}

inline std::vector<Document> two_language_docs(std::size_t per_language, std::size_t length, std::uint64_t seed) {
    Rng rng(seed);
    const SyntheticLanguage a(kAlphaA, seed * 2 + 1);
    const SyntheticLanguage b(kAlphaB, seed * 2 + 2);
    return two_language_docs(a, b, per_language, length, "", rng);
}

}  // namespace cusprune::testing
