#include "cusprune/corpus.hpp"

#include <set>
#include <sstream>
#include <unordered_set>

#include "cusprune/bundle.hpp"
#include "cusprune/error.hpp"
#include "cusprune/log.hpp"
#include "json.hpp"
#include <spdlog/spdlog.h>

namespace cusprune {

using nlohmann::json;

std::string_view axis_name(Axis axis) {
    switch (axis) {
        case Axis::Language: return "language";
        case Axis::Domain: return "domain";
        case Axis::Task: return "task";
    }
    return "?";
}

Axis parse_axis(std::string_view name) {
    if (name == "lang" || name == "language") return Axis::Language;
    if (name == "domain") return Axis::Domain;
    if (name == "task") return Axis::Task;
    throw ValidationError("unknown dimension axis: " + std::string(name));
}

const std::string& Document::tag(Axis axis) const {
    switch (axis) {
        case Axis::Language: return language;
        case Axis::Domain: return domain;
        case Axis::Task: return task;
    }
    return language;
}

DimensionSpec parse_dimension(std::string_view text) {
    DimensionSpec spec;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t comma = text.find(',', start);
        if (comma == std::string_view::npos) comma = text.size();
        const std::string_view part = text.substr(start, comma - start);
        const std::size_t eq = part.find('=');
        if (eq == std::string_view::npos || eq == 0 || eq + 1 == part.size()) {
            throw ValidationError("malformed dimension '" + std::string(text) + "', expected axis=value");
        }
        const Axis axis = parse_axis(part.substr(0, eq));
        if (!spec.emplace(axis, std::string(part.substr(eq + 1))).second) {
            throw ValidationError("axis repeated in dimension '" + std::string(text) + "'");
        }
        start = comma + 1;
    }
    return spec;
}

std::string dimension_label(const DimensionSpec& spec) {
    std::string axes;
    std::string values;
    for (const auto& [axis, value] : spec) {
        if (!axes.empty()) {
            axes += '-';
            values += '-';
        }
        axes += axis_name(axis);
        values += value;
    }
    return axes + ":" + values;
}

std::vector<Document> parse_documents(std::string_view jsonl) {
    std::vector<Document> docs;
    std::unordered_set<std::string> seen;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < jsonl.size()) {
        std::size_t end = jsonl.find('\n', start);
        if (end == std::string_view::npos) end = jsonl.size();
        std::string_view line = jsonl.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

        const std::string where = "line " + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            throw ValidationError(where + ": malformed JSON");
        }
        if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
        Document doc;
        for (auto [key, field] : {std::pair{"id", &doc.id}, std::pair{"text", &doc.text},
                                  std::pair{"language", &doc.language}, std::pair{"domain", &doc.domain},
                                  std::pair{"task", &doc.task}}) {
            if (!j.contains(key)) throw ValidationError(where + ": missing key \"" + key + "\"");
            if (!j[key].is_string()) throw ValidationError(where + ": key \"" + key + "\" must be a string");
            *field = j[key].get<std::string>();
        }
        if (doc.text.empty()) throw ValidationError(where + ": empty text");
        if (!seen.insert(doc.id).second) throw ValidationError(where + ": duplicate id \"" + doc.id + "\"");
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::vector<Document> load_documents(const std::filesystem::path& path) { return parse_documents(read_file(path)); }

DimensionCorpus build_dimension_corpus(const std::vector<Document>& docs, const DimensionSpec& fixed) {
    if (fixed.empty()) throw ValidationError("at least one dimension axis must be fixed");
    DimensionCorpus corpus;
    corpus.spec = fixed;
    for (const auto& doc : docs) {
        const bool match = std::all_of(fixed.begin(), fixed.end(),
                                       [&](const auto& kv) { return doc.tag(kv.first) == kv.second; });
        if (match) corpus.documents.push_back(doc);
    }
    if (corpus.documents.empty()) {
        throw ValidationError("no documents match dimension " + dimension_label(fixed));
    }
    for (Axis axis : {Axis::Language, Axis::Domain, Axis::Task}) {
        if (fixed.contains(axis)) continue;
        std::set<std::string> values;
        for (const auto& doc : corpus.documents) values.insert(doc.tag(axis));
        if (values.size() < 2) {
            corpus.warnings.push_back("corpus " + dimension_label(fixed) + " has a single " +
                                      std::string(axis_name(axis)) + " value (\"" + *values.begin() + "\")");
        }
    }
    for (const auto& w : corpus.warnings) log().warn("{}", w);
    if (corpus.documents.size() < kDefaultCorpusSize) {
        log().info("corpus {} has {} documents (target {})", corpus.label(), corpus.documents.size(),
                   kDefaultCorpusSize);
    }
    return corpus;
}

std::vector<TokenId> tokenize(const Vocab& vocab, std::string_view text) {
    std::vector<TokenId> ids;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t longest = std::min(vocab.max_token_bytes(), text.size() - pos);
        bool matched = false;
        for (std::size_t len = longest; len >= 1; --len) {
            if (auto id = vocab.find(text.substr(pos, len))) {
                ids.push_back(*id);
                pos += len;
                matched = true;
                break;
            }
        }
        if (!matched) {
            ids.push_back(vocab.byte_fallback(static_cast<unsigned char>(text[pos])));
            ++pos;
        }
    }
    return ids;
}

std::string detokenize(const Vocab& vocab, std::span<const TokenId> ids) {
    std::string out;
    for (TokenId id : ids) {
        const std::string& piece = vocab.token(id);
        // `<0xNN>` fallback entries decode to their byte.
        if (piece.size() == 6 && piece.starts_with("<0x") && piece.back() == '>') {
            out += static_cast<char>(std::stoi(piece.substr(3, 2), nullptr, 16));
        } else {
            out += piece;
        }
    }
    return out;
}

}  // namespace cusprune
