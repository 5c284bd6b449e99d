// Writes a toy bundle plus a synthetic two-language JSONL corpus for trying
// out the cusprune pipeline end to end.
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "cusprune/bundle.hpp"
#include "cusprune/corpus.hpp"
#include "cusprune/error.hpp"
#include "cusprune/toy.hpp"
#include "cusprune/trainer.hpp"
#include "json.hpp"

using namespace cusprune;

int main(int argc, char** argv) {
    CLI::App app{"Generate a toy model bundle and synthetic corpus", "cusprune_toy"};
    ToyShape shape;
    shape.vocab_size = 32;
    std::string out;
    std::uint64_t seed = 1;
    std::size_t docs_per_language = 50;
    std::size_t doc_length = 64;
    std::size_t train_steps = 0;
    app.add_option("--out", out, "Output directory")->required();
    app.add_option("--layers", shape.n_layers);
    app.add_option("--d-model", shape.d_model);
    app.add_option("--heads", shape.n_heads);
    app.add_option("--d-ff", shape.d_ff);
    app.add_option("--max-seq-len", shape.max_seq_len);
    app.add_option("--seed", seed);
    app.add_option("--docs", docs_per_language, "Documents per language");
    app.add_option("--doc-length", doc_length);
    app.add_option("--train-steps", train_steps, "Adam steps on the generated corpus (0 = random weights)");
    CLI11_PARSE(app, argc, argv);

    try {
        if (shape.d_model % shape.n_heads != 0) throw ValidationError("d_model must be divisible by heads");
        shape.head_dim = shape.d_model / shape.n_heads;
        shape.max_seq_len = std::max(shape.max_seq_len, doc_length);
        const std::string alpha_a = "abcdefghijklmnop";
        const std::string alpha_b = "ABCDEFGHIJKLMNOP";
        const Vocab vocab = char_vocab(alpha_a + alpha_b);
        const ModelConfig config = toy_config(shape);

        Rng rng(seed);
        const SyntheticLanguage lang_a(alpha_a, seed * 2 + 1);
        const SyntheticLanguage lang_b(alpha_b, seed * 2 + 2);
        const std::vector<std::string> domains{"news", "medical"};
        const std::vector<std::string> tasks{"qa", "summary"};
        auto docs = synthetic_documents(lang_a, "A", domains, tasks, docs_per_language, doc_length, "a", rng);
        auto docs_b = synthetic_documents(lang_b, "B", domains, tasks, docs_per_language, doc_length, "b", rng);
        docs.insert(docs.end(), docs_b.begin(), docs_b.end());

        WeightStore weights = random_weights(config, seed);
        if (train_steps > 0) {
            std::vector<std::vector<TokenId>> seqs;
            for (const auto& d : docs) seqs.push_back(tokenize(vocab, d.text));
            TrainOptions opts;
            opts.steps = train_steps;
            opts.seed = seed;
            const TrainResult r = train_toy(config, weights, seqs, opts);
            std::cout << "trained: loss " << r.first_loss << " -> " << r.final_loss << "\n";
            weights = r.weights;
        }

        const std::filesystem::path dir(out);
        std::filesystem::create_directories(dir);
        save_bundle(config, weights, vocab, dir / "model");
        std::string jsonl;
        for (const auto& d : docs) {
            jsonl += nlohmann::json{{"id", d.id}, {"text", d.text}, {"language", d.language}, {"domain", d.domain},
                                    {"task", d.task}}
                         .dump() +
                     "\n";
        }
        write_file_atomic(dir / "docs.jsonl", jsonl);
        std::cout << "wrote " << (dir / "model").string() << " and " << (dir / "docs.jsonl").string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
