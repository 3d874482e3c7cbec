#include "dlens/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "dlens/errors.hpp"
#include "dlens/model.hpp"
#include "dlens/rng.hpp"

namespace dlens {

namespace fs = std::filesystem;

void CorpusSpec::validate() const {
    if (vocab_size < 4) throw ConfigError("CorpusSpec: vocab_size must be >= 4");
    if (n_hidden_states < 1) throw ConfigError("CorpusSpec: n_hidden_states must be >= 1");
    if (!(transition_temperature > 0.0))
        throw ConfigError("CorpusSpec: transition_temperature must be > 0");
    if (min_len < 2 || max_len < min_len)
        throw ConfigError("CorpusSpec: infeasible length bounds");
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw ConfigError("CorpusSpec: split sizes must be >= 1");
}

const std::vector<Example>& Corpus::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split: " + name);
}

// ---------------------------------------------------------------------------
// Automaton

namespace {

void softmax_rows(std::vector<double>& logits, int rows, int cols, double temperature) {
    for (int r = 0; r < rows; ++r) {
        double* row = logits.data() + static_cast<int64_t>(r) * cols;
        double mx = row[0] / temperature;
        for (int c = 0; c < cols; ++c) mx = std::max(mx, row[c] / temperature);
        double denom = 0.0;
        for (int c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] / temperature - mx);
            denom += row[c];
        }
        for (int c = 0; c < cols; ++c) row[c] /= denom;
    }
}

}  // namespace

Automaton Automaton::build(const CorpusSpec& spec) {
    spec.validate();
    Automaton a;
    a.n_states = spec.n_hidden_states;
    a.n_symbols = spec.vocab_size - 3;
    Rng rng(subseed(spec.seed, "automaton-tables"));
    a.transition.resize(static_cast<int64_t>(a.n_states) * a.n_states);
    for (auto& x : a.transition) x = rng.normal();
    softmax_rows(a.transition, a.n_states, a.n_states, spec.transition_temperature);
    a.emission.resize(static_cast<int64_t>(a.n_states) * a.n_symbols);
    for (auto& x : a.emission) x = rng.normal();
    softmax_rows(a.emission, a.n_states, a.n_symbols, spec.transition_temperature);

    // stationary distribution by power iteration
    a.stationary.assign(a.n_states, 1.0 / a.n_states);
    std::vector<double> next(a.n_states);
    for (int iter = 0; iter < 10000; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        for (int s = 0; s < a.n_states; ++s)
            for (int s2 = 0; s2 < a.n_states; ++s2)
                next[s2] += a.stationary[s] * a.transition[s * a.n_states + s2];
        double delta = 0.0;
        for (int s = 0; s < a.n_states; ++s) delta += std::abs(next[s] - a.stationary[s]);
        a.stationary = next;
        if (delta < 1e-15) break;
    }
    return a;
}

std::vector<double> Automaton::stationary_unigram(int vocab_size) const {
    std::vector<double> u(vocab_size, 0.0);
    for (int s = 0; s < n_states; ++s)
        for (int j = 0; j < n_symbols; ++j)
            u[j + 3] += stationary[s] * emission[s * n_symbols + j];
    return u;
}

double Automaton::predictive_ce(std::span<const int32_t> tokens) const {
    if (tokens.empty()) throw std::invalid_argument("predictive_ce: empty sequence");
    std::vector<double> belief = stationary;
    std::vector<double> posterior(n_states);
    double ce = 0.0;
    for (int32_t id : tokens) {
        const int j = id - 3;
        if (j < 0 || j >= n_symbols)
            throw std::invalid_argument("predictive_ce: non-automaton token");
        double p = 0.0;
        for (int s = 0; s < n_states; ++s) p += belief[s] * emission[s * n_symbols + j];
        ce -= std::log(p);
        for (int s = 0; s < n_states; ++s)
            posterior[s] = belief[s] * emission[s * n_symbols + j] / p;
        std::fill(belief.begin(), belief.end(), 0.0);
        for (int s = 0; s < n_states; ++s)
            for (int s2 = 0; s2 < n_states; ++s2)
                belief[s2] += posterior[s] * transition[s * n_states + s2];
    }
    return ce / static_cast<double>(tokens.size());
}

double automaton_heldout_ce(const CorpusSpec& spec, const std::vector<Example>& examples) {
    const Automaton a = Automaton::build(spec);
    double total = 0.0;
    int64_t count = 0;
    for (const Example& ex : examples) {
        std::vector<int32_t> seq = ex.prompt_ids;
        seq.insert(seq.end(), ex.response_ids.begin(), ex.response_ids.end());
        total += a.predictive_ce(seq) * static_cast<double>(seq.size());
        count += static_cast<int64_t>(seq.size());
    }
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Generation

Corpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    const Automaton a = Automaton::build(spec);
    Rng rng(subseed(spec.seed, "corpus-sampling"));

    std::set<std::vector<int32_t>> seen;
    auto sample_unique = [&](int count) {
        std::vector<Example> out;
        out.reserve(count);
        int64_t attempts = 0;
        while (static_cast<int>(out.size()) < count) {
            if (++attempts > 1000LL * count)
                throw ConfigError("generate_corpus: cannot sample enough unique sequences");
            const int len =
                spec.min_len + static_cast<int>(rng.uniform_int(spec.max_len - spec.min_len + 1));
            std::vector<int32_t> seq(len);
            int state = static_cast<int>(
                rng.categorical({a.stationary.data(), a.stationary.size()}));
            for (int t = 0; t < len; ++t) {
                seq[t] = 3 + rng.categorical({a.emission.data() + state * a.n_symbols,
                                              static_cast<size_t>(a.n_symbols)});
                state = static_cast<int>(rng.categorical(
                    {a.transition.data() + state * a.n_states, static_cast<size_t>(a.n_states)}));
            }
            if (!seen.insert(seq).second) continue;  // enforce pairwise-disjoint splits
            const int split_at = 1 + static_cast<int>(rng.uniform_int(len - 1));
            Example ex;
            ex.prompt_ids.assign(seq.begin(), seq.begin() + split_at);
            ex.response_ids.assign(seq.begin() + split_at, seq.end());
            out.push_back(std::move(ex));
        }
        return out;
    };

    Corpus corpus;
    corpus.spec = spec;
    corpus.train = sample_unique(spec.n_train);
    corpus.val = sample_unique(spec.n_val);
    corpus.test = sample_unique(spec.n_test);
    return corpus;
}

// ---------------------------------------------------------------------------
// IO

namespace {

void write_split(const std::vector<Example>& examples, const fs::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("save_corpus: cannot open " + path.string());
    for (const Example& ex : examples) {
        nlohmann::json line = {{"prompt", ex.prompt_ids}, {"response", ex.response_ids}};
        f << line.dump() << "\n";
    }
    if (!f) throw IoError("save_corpus: write failed for " + path.string());
}

std::vector<Example> read_split(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("load_corpus: cannot open " + path.string());
    std::vector<Example> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            Example ex;
            ex.prompt_ids = j.at("prompt").get<std::vector<int32_t>>();
            ex.response_ids = j.at("response").get<std::vector<int32_t>>();
            out.push_back(std::move(ex));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("load_corpus: malformed line in " + path.string() + ": " + e.what());
        }
    }
    return out;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(dir);
    write_split(corpus.train, fs::path(dir) / "train.jsonl");
    write_split(corpus.val, fs::path(dir) / "val.jsonl");
    write_split(corpus.test, fs::path(dir) / "test.jsonl");
    nlohmann::json manifest = {{"vocab_size", corpus.spec.vocab_size},
                               {"n_hidden_states", corpus.spec.n_hidden_states},
                               {"transition_temperature", corpus.spec.transition_temperature},
                               {"min_len", corpus.spec.min_len},
                               {"max_len", corpus.spec.max_len},
                               {"n_train", corpus.spec.n_train},
                               {"n_val", corpus.spec.n_val},
                               {"n_test", corpus.spec.n_test},
                               {"seed", corpus.spec.seed}};
    std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("save_corpus: cannot write manifest");
    f << manifest.dump(2) << "\n";
}

Corpus load_corpus(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("load_corpus: missing manifest in " + dir);
    nlohmann::json manifest;
    try {
        f >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("load_corpus: corrupt manifest: ") + e.what());
    }
    Corpus corpus;
    try {
        corpus.spec.vocab_size = manifest.at("vocab_size").get<int>();
        corpus.spec.n_hidden_states = manifest.at("n_hidden_states").get<int>();
        corpus.spec.transition_temperature = manifest.at("transition_temperature").get<double>();
        corpus.spec.min_len = manifest.at("min_len").get<int>();
        corpus.spec.max_len = manifest.at("max_len").get<int>();
        corpus.spec.n_train = manifest.at("n_train").get<int>();
        corpus.spec.n_val = manifest.at("n_val").get<int>();
        corpus.spec.n_test = manifest.at("n_test").get<int>();
        corpus.spec.seed = manifest.at("seed").get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("load_corpus: corrupt manifest: ") + e.what());
    }
    corpus.train = read_split(fs::path(dir) / "train.jsonl");
    corpus.val = read_split(fs::path(dir) / "val.jsonl");
    corpus.test = read_split(fs::path(dir) / "test.jsonl");
    return corpus;
}

// ---------------------------------------------------------------------------
// Tokenizer

std::vector<int32_t> encode(const std::string& text, int vocab_size) {
    std::vector<int32_t> out;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') ++i;
        if (i >= text.size()) break;
        size_t j = text.find(' ', i);
        if (j == std::string::npos) j = text.size();
        const std::string sym = text.substr(i, j - i);
        i = j;
        int32_t id;
        if (sym == "<pad>") {
            id = kPadId;
        } else if (sym == "<bos>") {
            id = kBosId;
        } else if (sym == "<eos>") {
            id = kEosId;
        } else if (sym.size() > 1 && sym[0] == 'w') {
            int v = -1;
            try {
                size_t used = 0;
                v = std::stoi(sym.substr(1), &used);
                if (used != sym.size() - 1) v = -1;
            } catch (...) {
                v = -1;
            }
            if (v < 0 || v + 3 >= vocab_size)
                throw std::invalid_argument("encode: unknown symbol " + sym);
            id = static_cast<int32_t>(v + 3);
        } else {
            throw std::invalid_argument("encode: unknown symbol " + sym);
        }
        out.push_back(id);
    }
    return out;
}

std::string decode(std::span<const int32_t> ids, int vocab_size) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        const int32_t id = ids[i];
        if (id < 0 || id >= vocab_size) throw std::invalid_argument("decode: id out of range");
        if (i > 0) out += ' ';
        if (id == kPadId)
            out += "<pad>";
        else if (id == kBosId)
            out += "<bos>";
        else if (id == kEosId)
            out += "<eos>";
        else
            out += "w" + std::to_string(id - 3);
    }
    return out;
}

}  // namespace dlens
