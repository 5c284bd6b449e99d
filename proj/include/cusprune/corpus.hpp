#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cusprune/vocab.hpp"

namespace cusprune {

enum class Axis { Language, Domain, Task };

std::string_view axis_name(Axis axis);
// Accepts "lang", "language", "domain", "task".
Axis parse_axis(std::string_view name);

struct Document {
    std::string id;
    std::string text;
    std::string language;
    std::string domain;
    std::string task;

    const std::string& tag(Axis axis) const;
};

// Fixed axis -> required value.
using DimensionSpec = std::map<Axis, std::string>;

// Parses "lang=de" or the combined form "domain=medical,task=mcq".
DimensionSpec parse_dimension(std::string_view text);
// "language:de", "domain-task:medical-mcq".
std::string dimension_label(const DimensionSpec& spec);

struct DimensionCorpus {
    DimensionSpec spec;
    std::vector<Document> documents;
    // Free axes showing fewer than two distinct values.
    std::vector<std::string> warnings;
    // Where the documents came from (file path), used in provenance records.
    std::string source;

    std::string label() const { return dimension_label(spec); }
};

inline constexpr std::size_t kDefaultCorpusSize = 50;

std::vector<Document> parse_documents(std::string_view jsonl);
std::vector<Document> load_documents(const std::filesystem::path& path);

DimensionCorpus build_dimension_corpus(const std::vector<Document>& docs, const DimensionSpec& fixed);

// Greedy longest match over vocab entries with byte fallback.
std::vector<TokenId> tokenize(const Vocab& vocab, std::string_view text);
std::string detokenize(const Vocab& vocab, std::span<const TokenId> ids);

}  // namespace cusprune
