#include "doctest.h"

#include "cusprune/bundle.hpp"
#include "cusprune/corpus.hpp"
#include "cusprune/error.hpp"
#include "support.hpp"

using namespace cusprune;
using cusprune::testing::TempDir;

namespace {

std::string line(const std::string& id, const std::string& lang, const std::string& domain, const std::string& task) {
    return R"({"id":")" + id + R"(","text":"hello )" + id + R"(","language":")" + lang + R"(","domain":")" + domain +
           R"(","task":")" + task + "\"}\n";
}

std::vector<Document> mixed() {
    return parse_documents(line("1", "de", "news", "qa") + line("2", "zh", "news", "qa") +
                           line("3", "de", "medical", "mcq") + line("4", "zh", "medical", "mcq") +
                           line("5", "de", "medical", "summary"));
}

}  // namespace

TEST_CASE("load_documents keeps file order") {
    TempDir tmp;
    write_file_atomic(tmp / "d.jsonl", line("a", "de", "news", "qa") + line("b", "de", "law", "qa") + "\n" +
                                           line("c", "zh", "news", "mcq"));
    const auto docs = load_documents(tmp / "d.jsonl");
    REQUIRE(docs.size() == 3);
    CHECK(docs[0].id == "a");
    CHECK(docs[1].id == "b");
    CHECK(docs[2].id == "c");
    CHECK(docs[2].language == "zh");
    CHECK_THROWS_AS(load_documents(tmp / "absent.jsonl"), IoError);
}

TEST_CASE("document parse errors name the line") {
    const std::string missing_task = R"({"id":"x","text":"t","language":"de","domain":"news"})";
    CHECK_THROWS_WITH_AS(parse_documents(line("a", "de", "news", "qa") + missing_task),
                         doctest::Contains("line 2"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_documents(missing_task), doctest::Contains("task"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_documents(line("a", "de", "news", "qa") + line("a", "zh", "news", "qa")),
                         doctest::Contains("duplicate id"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_documents("{not json\n"), doctest::Contains("line 1"), ValidationError);
    CHECK_THROWS_AS(parse_documents(R"({"id":"x","text":"","language":"de","domain":"n","task":"q"})"),
                    ValidationError);
}

TEST_CASE("dimension corpora filter on every fixed axis") {
    const auto docs = mixed();
    const DimensionCorpus de = build_dimension_corpus(docs, {{Axis::Language, "de"}});
    REQUIRE(de.documents.size() == 3);
    for (const auto& d : de.documents) CHECK(d.language == "de");
    CHECK(de.warnings.empty());

    const DimensionCorpus combo = build_dimension_corpus(docs, parse_dimension("domain=medical,task=mcq"));
    REQUIRE(combo.documents.size() == 2);
    CHECK(combo.documents[0].id == "3");
    CHECK(combo.documents[1].id == "4");
    CHECK(combo.label() == "domain-task:medical-mcq");

    CHECK_THROWS_AS(build_dimension_corpus(docs, {{Axis::Language, "fr"}}), ValidationError);
    CHECK_THROWS_AS(build_dimension_corpus(docs, {}), ValidationError);
}

TEST_CASE("a corpus lacking variety on a free axis warns") {
    const auto docs = parse_documents(line("1", "de", "news", "qa") + line("2", "de", "news", "mcq") +
                                      line("3", "zh", "law", "qa"));
    const DimensionCorpus de = build_dimension_corpus(docs, {{Axis::Language, "de"}});
    CHECK(de.documents.size() == 2);
    REQUIRE(de.warnings.size() == 1);
    CHECK(de.warnings[0].find("domain") != std::string::npos);
}

TEST_CASE("dimension specs parse") {
    CHECK(parse_dimension("lang=de") == DimensionSpec{{Axis::Language, "de"}});
    CHECK(parse_dimension("language=de") == DimensionSpec{{Axis::Language, "de"}});
    CHECK(dimension_label(parse_dimension("lang=de")) == "language:de");
    CHECK_THROWS_AS(parse_dimension("colour=red"), ValidationError);
    CHECK_THROWS_AS(parse_dimension("lang"), ValidationError);
    CHECK_THROWS_AS(parse_dimension("lang=de,lang=zh"), ValidationError);
}

TEST_CASE("tokenize uses greedy longest match with byte fallback") {
    const Vocab bytes = Vocab::byte_level();
    CHECK(tokenize(bytes, "ab") == std::vector<TokenId>{97, 98});
    CHECK(tokenize(bytes, "").empty());

    const Vocab v({"<0x00>", "a", "b", "ab", "abc", "<0x7A>"});
    CHECK(tokenize(v, "ab") == std::vector<TokenId>{3});
    CHECK(tokenize(v, "abcab") == std::vector<TokenId>{4, 3});
    CHECK(tokenize(v, "abz") == std::vector<TokenId>{3, 5});
    CHECK(tokenize(v, "q") == std::vector<TokenId>{0});
}

TEST_CASE("detokenize inverts byte-level tokenization") {
    const Vocab bytes = Vocab::byte_level();
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        std::string s;
        for (std::size_t i = 0; i < 1 + rng.below(40); ++i) s.push_back(static_cast<char>(rng.below(256)));
        const auto ids = tokenize(bytes, s);
        CHECK(detokenize(bytes, ids) == s);
        CHECK(tokenize(bytes, s) == ids);
    }
}
