#include "cusprune/bundle.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "cusprune/error.hpp"
#include "json.hpp"

namespace cusprune {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "tensors.bin codec assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
  public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto view = bytes_.substr(pos_, n);
        pos_ += n;
        return view;
    }

    bool done() const { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw ValidationError("truncated tensors.bin");
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

constexpr std::uint8_t kDtypeF32 = 0;

const char* const kConfigKeys[] = {"n_layers",   "d_model",     "n_heads",  "head_dim",  "d_ff", "vocab_size",
                                   "max_seq_len", "norm_eps",   "rope_base", "layers",   "metadata"};

}  // namespace

std::string encode_tensors(const WeightStore& weights) {
    std::string out;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(weights.size()));
    for (const auto& [name, tensor] : weights) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, kDtypeF32);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.rank()));
        for (std::size_t d : tensor.shape()) put<std::uint64_t>(out, d);
        auto data = tensor.data();
        out.append(reinterpret_cast<const char*>(data.data()), data.size_bytes());
    }
    return out;
}

WeightStore decode_tensors(std::string_view bytes) {
    Reader in(bytes);
    WeightStore weights;
    const auto count = in.get<std::uint32_t>();
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = in.get<std::uint32_t>();
        std::string name(in.take(name_len));
        const auto dtype = in.get<std::uint8_t>();
        if (dtype != kDtypeF32) throw ValidationError("unsupported dtype for tensor " + name);
        const auto rank = in.get<std::uint8_t>();
        std::vector<std::size_t> shape(rank);
        std::uint64_t elements = 1;
        for (auto& d : shape) {
            d = in.get<std::uint64_t>();
            elements *= d;
        }
        auto payload = in.take(elements * sizeof(float));
        std::vector<float> data(elements);
        std::memcpy(data.data(), payload.data(), payload.size());
        if (!weights.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
            throw ValidationError("duplicate tensor name: " + name);
        }
    }
    if (!in.done()) throw ValidationError("trailing bytes in tensors.bin");
    return weights;
}

std::string config_to_json(const ModelConfig& c) {
    json j;
    j["n_layers"] = c.n_layers;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["head_dim"] = c.head_dim;
    j["d_ff"] = c.d_ff;
    j["vocab_size"] = c.vocab_size;
    j["max_seq_len"] = c.max_seq_len;
    j["norm_eps"] = c.norm_eps;
    j["rope_base"] = c.rope_base;
    j["layers"] = json::array();
    for (const auto& o : c.layers) {
        j["layers"].push_back({{"layer_index", o.layer_index},
                               {"d_ff_actual", o.d_ff_actual},
                               {"n_heads_actual", o.n_heads_actual()},
                               {"v_dims", o.v_dims}});
    }
    if (!c.metadata.empty()) j["metadata"] = c.metadata;
    return j.dump(2) + "\n";
}

ModelConfig config_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config.json: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("config.json: expected an object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(std::begin(kConfigKeys), std::end(kConfigKeys), key) == std::end(kConfigKeys)) {
            throw ValidationError("config.json: unknown key " + key);
        }
    }
    ModelConfig c;
    try {
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.head_dim = j.at("head_dim").get<std::size_t>();
        c.d_ff = j.at("d_ff").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
        c.norm_eps = j.value("norm_eps", 1e-5);
        c.rope_base = j.value("rope_base", 10000.0);
        for (const auto& o : j.value("layers", json::array())) {
            LayerOverride lo;
            lo.layer_index = o.at("layer_index").get<std::size_t>();
            lo.d_ff_actual = o.at("d_ff_actual").get<std::size_t>();
            lo.v_dims = o.at("v_dims").get<std::vector<std::size_t>>();
            if (o.at("n_heads_actual").get<std::size_t>() != lo.v_dims.size()) {
                throw ValidationError("config.json: n_heads_actual disagrees with v_dims for layer " +
                                      std::to_string(lo.layer_index));
            }
            c.layers.push_back(std::move(lo));
        }
        if (j.contains("metadata")) c.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config.json: ") + e.what());
    }
    c.validate();
    return c;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += kHex[digest[i] >> 4];
        out += kHex[digest[i] & 0xF];
    }
    return out;
}

std::string fingerprint_of(const WeightStore& weights) { return sha256_hex(encode_tensors(weights)); }

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path.string());
    return buf.str();
}

namespace {

std::string temp_suffix() {
    std::random_device rd;
    return ".tmp-" + std::to_string(rd());
}

void write_plain(const fs::path& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.close();
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view contents) {
    const fs::path tmp = path.string() + temp_suffix();
    try {
        write_plain(tmp, contents);
        fs::rename(tmp, path);
    } catch (const fs::filesystem_error& e) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw IoError(e.what());
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
}

Bundle make_bundle(ModelConfig config, WeightStore weights, Vocab vocab) {
    Bundle b{std::move(config), std::move(weights), std::move(vocab), {}};
    b.fingerprint = fingerprint_of(b.weights);
    return b;
}

Bundle load_bundle(const fs::path& dir) {
    for (const char* file : {"config.json", "tensors.bin", "vocab.txt"}) {
        if (!fs::exists(dir / file)) throw IoError("missing file: " + (dir / file).string());
    }
    Bundle b;
    b.config = config_from_json(read_file(dir / "config.json"));
    const std::string tensor_bytes = read_file(dir / "tensors.bin");
    b.weights = decode_tensors(tensor_bytes);
    validate_weights(b.config, b.weights);
    b.fingerprint = sha256_hex(tensor_bytes);

    const std::string vocab_text = read_file(dir / "vocab.txt");
    std::vector<std::string> tokens;
    std::size_t start = 0;
    while (start < vocab_text.size()) {
        std::size_t end = vocab_text.find('\n', start);
        if (end == std::string::npos) end = vocab_text.size();
        tokens.push_back(unescape_vocab_line(std::string_view(vocab_text).substr(start, end - start)));
        start = end + 1;
    }
    b.vocab = Vocab(std::move(tokens));
    if (b.vocab.size() != b.config.vocab_size) {
        throw ValidationError("vocab.txt has " + std::to_string(b.vocab.size()) + " entries, config expects " +
                              std::to_string(b.config.vocab_size));
    }
    return b;
}

void save_bundle(const ModelConfig& config, const WeightStore& weights, const Vocab& vocab, const fs::path& dir) {
    if (vocab.empty()) throw ValidationError("cannot save a bundle with an empty vocab");
    if (vocab.size() != config.vocab_size) throw ValidationError("vocab size does not match config");
    validate_weights(config, weights);

    std::string vocab_text;
    for (const auto& token : vocab.tokens()) vocab_text += escape_vocab_line(token) + "\n";

    fs::path target = dir;
    if (target.filename().empty()) target = target.parent_path();
    const fs::path tmp = target.string() + temp_suffix();
    try {
        fs::create_directories(tmp);
        write_plain(tmp / "config.json", config_to_json(config));
        write_plain(tmp / "tensors.bin", encode_tensors(weights));
        write_plain(tmp / "vocab.txt", vocab_text);
        if (fs::exists(target)) fs::remove_all(target);
        fs::rename(tmp, target);
    } catch (const fs::filesystem_error& e) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw IoError(e.what());
    } catch (...) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw;
    }
}

}  // namespace cusprune
