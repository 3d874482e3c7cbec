#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dlens {

// Seeded hidden-state automaton corpus. Token ids 0/1/2 are PAD/BOS/EOS;
// ids 3..V-1 are emitted by the automaton.
struct CorpusSpec {
    int vocab_size = 64;
    int n_hidden_states = 8;
    double transition_temperature = 0.5;  // softmax temperature for both tables
    int min_len = 12;  // total tokens per sequence (prompt + response)
    int max_len = 24;
    int n_train = 2048;
    int n_val = 256;
    int n_test = 256;
    uint64_t seed = 1234;

    void validate() const;
};

struct Example {
    std::vector<int32_t> prompt_ids;
    std::vector<int32_t> response_ids;
};

struct Corpus {
    CorpusSpec spec;
    std::vector<Example> train, val, test;

    const std::vector<Example>& split(const std::string& name) const;
};

// The automaton behind a spec: row-stochastic transition [S,S], emission
// [S, V-3] over regular tokens, and the stationary state distribution.
struct Automaton {
    int n_states = 0;
    int n_symbols = 0;  // regular tokens; symbol j is token id j + 3
    std::vector<double> transition;  // [S, S]
    std::vector<double> emission;    // [S, n_symbols]
    std::vector<double> stationary;  // [S]

    static Automaton build(const CorpusSpec& spec);

    // Expected unigram over token ids (regular ids only; specials get 0).
    std::vector<double> stationary_unigram(int vocab_size) const;
    // Exact predictive cross-entropy of the automaton itself on a sequence
    // (forward-algorithm filtering over hidden states).
    double predictive_ce(std::span<const int32_t> tokens) const;
};

// Deterministic generation; train/val/test sequences are pairwise disjoint by
// construction (duplicates are rejected during sampling).
Corpus generate_corpus(const CorpusSpec& spec);

// JSONL corpus files plus a manifest sidecar echoing the spec.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

// Fixed whitespace tokenizer over the symbol alphabet: "<pad>" "<bos>" "<eos>"
// plus "w0".."w{V-4}". decode(encode(s)) == s over valid symbol strings.
std::vector<int32_t> encode(const std::string& text, int vocab_size);
std::string decode(std::span<const int32_t> ids, int vocab_size);

// Mean predictive CE of the automaton over a set of examples (prompt followed
// by response, no specials).
double automaton_heldout_ce(const CorpusSpec& spec, const std::vector<Example>& examples);

}  // namespace dlens
