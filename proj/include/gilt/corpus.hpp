#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gilt/graph.hpp"
#include "gilt/train.hpp"

namespace gilt {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusExample {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
  std::vector<std::pair<int, int>> word_spans;  // half-open, 0-based token offsets
  std::vector<Edge> edges;

  int num_words() const { return static_cast<int>(word_spans.size()); }
  WordAlignment alignment() const { return WordAlignment::from_spans(word_spans); }
  WordGraph graph() const { return WordGraph(num_words(), edges); }
  // Whitespace words of the text, recovered by joining each span's tokens.
  std::vector<std::string> words() const;

  friend bool operator==(const CorpusExample&, const CorpusExample&) = default;
};

// Throws CorpusError naming the example id on any violated invariant.
void validate_example(const CorpusExample& example);

nlohmann::json to_json(const CorpusExample& example);
// tokens and word_spans may be omitted, in which case every whitespace word of
// text is one token. line is used for error messages only.
CorpusExample example_from_json(const nlohmann::json& j, int line = 0);

struct CorpusReport {
  std::size_t examples = 0;
  int max_words = 0;
  int max_tokens = 0;
  int max_count = 0;  // largest gold count on earlier words (drives C)
  FeatureMaxima features;  // drives the caps
};

CorpusReport corpus_report(const std::vector<CorpusExample>& corpus, const TapeSettings& settings);

std::vector<CorpusExample> read_corpus(std::istream& in);
std::vector<CorpusExample> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, const std::vector<CorpusExample>& corpus);

// Whitespace words, with words seen fewer than min_word_freq times during fit
// split into character pieces of piece_size characters.
class Tokenizer {
 public:
  explicit Tokenizer(int min_word_freq = 3, int piece_size = 2);

  void fit(const std::vector<std::string>& texts);
  bool is_frequent(const std::string& word) const;

  struct Result {
    std::vector<std::string> tokens;
    std::vector<std::pair<int, int>> word_spans;
  };
  Result tokenize(const std::string& text) const;

  int min_word_freq() const { return min_word_freq_; }
  int piece_size() const { return piece_size_; }

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);

 private:
  int min_word_freq_;
  int piece_size_;
  std::map<std::string, int> counts_;
};

std::vector<std::string> split_words(const std::string& text);

// Token inventory. Entries are keyed by surface form plus a word-start flag:
// continuation pieces are stored as "##piece".
class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kUnkPiece = 3;
  static constexpr int kReserved = 4;

  Vocabulary();
  // Tokens seen at least min_freq times, ordered by frequency (descending)
  // then lexicographically.
  static Vocabulary build(const std::vector<CorpusExample>& corpus, int min_freq = 1);

  int size() const { return static_cast<int>(entries_.size()); }
  int id(const std::string& token, bool word_start) const;
  const std::string& entry(int id) const;
  // Surface form without the continuation marker.
  std::string surface(int id) const;
  bool starts_word(int id) const;

  // BOS followed by one id per token.
  std::vector<int> encode(const std::vector<std::string>& tokens,
                          const std::vector<std::pair<int, int>>& spans) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.entries_ == b.entries_;
  }

 private:
  void push(const std::string& key);

  std::vector<std::string> entries_;
  std::map<std::string, int> index_;
};

TrainingExample to_training_example(const CorpusExample& example, const Vocabulary& vocab);

// Builds a corpus example from raw text with no gold edges.
CorpusExample example_from_text(const std::string& id, const std::string& text,
                                const Tokenizer& tokenizer);

// A small probabilistic grammar with number agreement. Sentences come with
// consistent semantic-style dependency graphs (DAGs: a subject shared by two
// coordinated verbs has two heads).
struct ToySentence {
  std::vector<std::string> words;
  std::vector<Edge> edges;
  // Agreement site used for minimal pairs: word index (1-based) of the verb
  // whose number must match the subject, and its opposite-number form.
  int verb = 0;
  std::string flipped_verb;
  std::string tag;  // "simple", "attractor" or "coordination"

  std::string text() const;
};

std::vector<ToySentence> generate_toy_sentences(int count, std::uint64_t seed);

struct MinimalPair {
  std::string good;
  std::string bad;
  std::string tag;
};

MinimalPair agreement_pair(const ToySentence& sentence);
std::vector<MinimalPair> read_minimal_pairs(std::istream& in);
std::vector<MinimalPair> load_minimal_pairs(const std::filesystem::path& path);
void save_minimal_pairs(const std::filesystem::path& path, const std::vector<MinimalPair>& pairs);

// Corpus examples for toy sentences, tokenised with the tokenizer.
std::vector<CorpusExample> toy_corpus(const std::vector<ToySentence>& sentences,
                                      const Tokenizer& tokenizer);

}  // namespace gilt
