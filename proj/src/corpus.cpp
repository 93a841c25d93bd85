#include "gilt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace gilt {

using nlohmann::json;

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::vector<std::string> CorpusExample::words() const {
  std::vector<std::string> out;
  for (auto [b, e] : word_spans) {
    std::string w;
    for (int t = b; t < e && t < static_cast<int>(tokens.size()); ++t) w += tokens[t];
    out.push_back(w);
  }
  return out;
}

void validate_example(const CorpusExample& ex) {
  auto fail = [&](const std::string& m) { throw CorpusError("example " + ex.id + ": " + m); };
  for (const auto& t : ex.tokens) {
    if (t.empty()) fail("empty token");
    if (t.find_first_of(" \t\r\n") != std::string::npos) fail("token '" + t + "' holds whitespace");
  }
  int expected = 0;
  for (std::size_t w = 0; w < ex.word_spans.size(); ++w) {
    auto [b, e] = ex.word_spans[w];
    if (b != expected || e <= b) fail("word span " + std::to_string(w) + " is empty or not contiguous");
    expected = e;
  }
  if (expected != static_cast<int>(ex.tokens.size())) fail("word spans do not cover every token");
  if (!ex.text.empty() && split_words(ex.text) != ex.words()) {
    fail("tokens do not reproduce the words of the text");
  }
  auto violations = validate_edges(ex.num_words(), ex.edges);
  if (!violations.empty()) fail(violations.front().message);
}

json to_json(const CorpusExample& ex) {
  json spans = json::array();
  for (auto [b, e] : ex.word_spans) spans.push_back({b, e});
  json edges = json::array();
  for (const Edge& e : ex.edges) edges.push_back({e.head, e.dependent});
  return json{{"id", ex.id}, {"text", ex.text}, {"tokens", ex.tokens},
              {"word_spans", spans}, {"edges", edges}};
}

CorpusExample example_from_json(const json& j, int line) {
  std::string where = line > 0 ? "line " + std::to_string(line) + ": " : "";
  if (!j.is_object()) throw CorpusError(where + "expected a JSON object");
  CorpusExample ex;
  try {
    ex.id = j.contains("id") ? j.at("id").get<std::string>() : "line-" + std::to_string(line);
    ex.text = j.value("text", std::string());
    if (j.contains("tokens")) {
      ex.tokens = j.at("tokens").get<std::vector<std::string>>();
    } else {
      ex.tokens = split_words(ex.text);
    }
    if (j.contains("word_spans")) {
      for (const auto& s : j.at("word_spans")) {
        if (!s.is_array() || s.size() != 2) throw CorpusError("word span must be [begin, end]");
        ex.word_spans.emplace_back(s[0].get<int>(), s[1].get<int>());
      }
    } else {
      for (int t = 0; t < static_cast<int>(ex.tokens.size()); ++t) ex.word_spans.emplace_back(t, t + 1);
    }
    if (j.contains("edges")) {
      for (const auto& e : j.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw CorpusError("edge must be [head, dependent]");
        ex.edges.push_back({e[0].get<int>(), e[1].get<int>()});
      }
    }
  } catch (const json::exception& e) {
    throw CorpusError(where + e.what());
  } catch (const CorpusError& e) {
    throw CorpusError(where + e.what());
  }
  try {
    validate_example(ex);
  } catch (const CorpusError& e) {
    throw CorpusError(where + e.what());
  }
  return ex;
}

CorpusReport corpus_report(const std::vector<CorpusExample>& corpus, const TapeSettings& settings) {
  CorpusReport r;
  r.examples = corpus.size();
  for (const auto& ex : corpus) {
    r.max_words = std::max(r.max_words, ex.num_words());
    r.max_tokens = std::max(r.max_tokens, static_cast<int>(ex.tokens.size()));
    WordGraph g = ex.graph();
    for (int i = 1; i <= g.num_words(); ++i) r.max_count = std::max(r.max_count, backward_edge_count(g, i));
    merge_maxima(r.features, feature_maxima(g, settings));
  }
  return r;
}

std::vector<CorpusExample> read_corpus(std::istream& in) {
  std::vector<CorpusExample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusError("line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(example_from_json(j, line_no));
  }
  return out;
}

std::vector<CorpusExample> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus " + path.string());
  return read_corpus(in);
}

void save_corpus(const std::filesystem::path& path, const std::vector<CorpusExample>& corpus) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write corpus " + path.string());
  for (const auto& ex : corpus) out << to_json(ex).dump() << '\n';
}

Tokenizer::Tokenizer(int min_word_freq, int piece_size)
    : min_word_freq_(min_word_freq), piece_size_(piece_size) {
  if (piece_size < 1) throw std::invalid_argument("piece_size must be positive");
}

void Tokenizer::fit(const std::vector<std::string>& texts) {
  for (const auto& t : texts) {
    for (const auto& w : split_words(t)) ++counts_[w];
  }
}

bool Tokenizer::is_frequent(const std::string& word) const {
  auto it = counts_.find(word);
  int n = it == counts_.end() ? 0 : it->second;
  return n >= min_word_freq_;
}

Tokenizer::Result Tokenizer::tokenize(const std::string& text) const {
  Result r;
  for (const auto& w : split_words(text)) {
    int begin = static_cast<int>(r.tokens.size());
    if (is_frequent(w)) {
      r.tokens.push_back(w);
    } else {
      for (std::size_t p = 0; p < w.size(); p += piece_size_) r.tokens.push_back(w.substr(p, piece_size_));
    }
    r.word_spans.emplace_back(begin, static_cast<int>(r.tokens.size()));
  }
  return r;
}

json Tokenizer::to_json() const {
  return json{{"min_word_freq", min_word_freq_}, {"piece_size", piece_size_}, {"counts", counts_}};
}

Tokenizer Tokenizer::from_json(const json& j) {
  Tokenizer t(j.at("min_word_freq").get<int>(), j.at("piece_size").get<int>());
  t.counts_ = j.at("counts").get<std::map<std::string, int>>();
  return t;
}

namespace {

std::string vocab_key(const std::string& token, bool word_start) {
  return word_start ? token : "##" + token;
}

}  // namespace

Vocabulary::Vocabulary() {
  push("<s>");
  push("</s>");
  push("<unk>");
  push("##<unk>");
}

void Vocabulary::push(const std::string& key) {
  if (index_.contains(key)) throw std::invalid_argument("duplicate vocabulary entry " + key);
  index_[key] = static_cast<int>(entries_.size());
  entries_.push_back(key);
}

Vocabulary Vocabulary::build(const std::vector<CorpusExample>& corpus, int min_freq) {
  std::map<std::string, int> counts;
  for (const auto& ex : corpus) {
    for (auto [b, e] : ex.word_spans) {
      for (int t = b; t < e; ++t) ++counts[vocab_key(ex.tokens[t], t == b)];
    }
  }
  std::vector<std::pair<std::string, int>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [key, n] : items) {
    if (n >= min_freq && !v.index_.contains(key)) v.push(key);
  }
  return v;
}

int Vocabulary::id(const std::string& token, bool word_start) const {
  auto it = index_.find(vocab_key(token, word_start));
  if (it != index_.end()) return it->second;
  return word_start ? kUnk : kUnkPiece;
}

const std::string& Vocabulary::entry(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary id " + std::to_string(id));
  return entries_[id];
}

std::string Vocabulary::surface(int id) const {
  const std::string& e = entry(id);
  return e.rfind("##", 0) == 0 && id != kBos ? e.substr(2) : e;
}

bool Vocabulary::starts_word(int id) const { return entry(id).rfind("##", 0) != 0; }

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens,
                                    const std::vector<std::pair<int, int>>& spans) const {
  std::vector<int> ids{kBos};
  for (auto [b, e] : spans) {
    for (int t = b; t < e; ++t) ids.push_back(id(tokens.at(t), t == b));
  }
  if (ids.size() != tokens.size() + 1) throw std::invalid_argument("spans do not cover the tokens");
  return ids;
}

json Vocabulary::to_json() const { return json{{"entries", entries_}}; }

Vocabulary Vocabulary::from_json(const json& j) {
  auto entries = j.at("entries").get<std::vector<std::string>>();
  Vocabulary v;
  if (entries.size() < kReserved ||
      !std::equal(v.entries_.begin(), v.entries_.end(), entries.begin())) {
    throw std::invalid_argument("vocabulary lacks the reserved entries");
  }
  for (std::size_t i = kReserved; i < entries.size(); ++i) v.push(entries[i]);
  return v;
}

TrainingExample to_training_example(const CorpusExample& ex, const Vocabulary& vocab) {
  TrainingExample t;
  t.id = ex.id;
  t.ids = vocab.encode(ex.tokens, ex.word_spans);
  t.alignment = ex.alignment();
  t.gold = ex.graph();
  return t;
}

CorpusExample example_from_text(const std::string& id, const std::string& text,
                                const Tokenizer& tokenizer) {
  CorpusExample ex;
  ex.id = id;
  ex.text = text;
  auto r = tokenizer.tokenize(text);
  ex.tokens = std::move(r.tokens);
  ex.word_spans = std::move(r.word_spans);
  return ex;
}

// ---- toy grammar ----------------------------------------------------------

namespace {

struct Inflected {
  const char* singular;
  const char* plural;
};

const std::vector<Inflected> kNouns = {
    {"dog", "dogs"}, {"cat", "cats"}, {"bird", "birds"}, {"farmer", "farmers"}, {"teacher", "teachers"}};
const std::vector<Inflected> kIntransitive = {
    {"runs", "run"}, {"sleeps", "sleep"}, {"sings", "sing"}, {"waits", "wait"}};
const std::vector<Inflected> kTransitive = {
    {"sees", "see"}, {"chases", "chase"}, {"likes", "like"}, {"follows", "follow"}};
const std::vector<std::string> kSingularDets = {"the", "a", "this"};
const std::vector<std::string> kPluralDets = {"the", "some", "these"};
const std::vector<std::string> kAdjectives = {"big", "small", "red", "happy"};
const std::vector<std::string> kPrepositions = {"near", "behind", "with"};
const std::vector<std::string> kNames = {"Bartholomew", "Gwendolyn", "Maximilian", "Evangeline",
                                         "Cornelius",   "Theodora",  "Archibald",  "Ottoline"};

class ToyBuilder {
 public:
  explicit ToyBuilder(std::mt19937_64& rng) : rng_(rng) {}

  bool coin(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }
  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng_)];
  }

  int add(const std::string& w) {
    s.words.push_back(w);
    return static_cast<int>(s.words.size());
  }
  void edge(int h, int d) { s.edges.push_back({h, d}); }

  // Returns the head noun; attractor is set when an attached prepositional
  // phrase holds a noun of the other number.
  int noun_phrase(bool plural, bool allow_pp, bool* attractor) {
    if (!plural && coin(0.15)) return add(pick(kNames));
    int det = add(pick(plural ? kPluralDets : kSingularDets));
    int adj = coin(0.3) ? add(pick(kAdjectives)) : 0;
    const auto& n = pick(kNouns);
    int noun = add(plural ? n.plural : n.singular);
    edge(noun, det);
    if (adj) edge(adj, noun);
    if (allow_pp && coin(0.3)) {
      int prep = add(pick(kPrepositions));
      edge(prep, noun);
      bool inner_plural = coin(0.5);
      int inner = noun_phrase(inner_plural, false, nullptr);
      edge(prep, inner);
      if (attractor) *attractor = inner_plural != plural;
    }
    return noun;
  }

  ToySentence sentence() {
    s = ToySentence{};
    bool plural = coin(0.5);
    bool attractor = false;
    int subject = noun_phrase(plural, true, &attractor);
    if (coin(0.2)) {
      const auto& v1 = pick(kIntransitive);
      const auto& v2 = pick(kIntransitive);
      int a = add(plural ? v1.plural : v1.singular);
      edge(a, subject);
      int conj = add("and");
      edge(conj, a);
      edge(0, conj);
      int b = add(plural ? v2.plural : v2.singular);
      edge(b, subject);
      edge(conj, b);
      s.verb = a;
      s.flipped_verb = plural ? v1.singular : v1.plural;
      s.tag = "coordination";
    } else {
      bool transitive = coin(0.5);
      const auto& v = pick(transitive ? kTransitive : kIntransitive);
      int verb = add(plural ? v.plural : v.singular);
      edge(verb, subject);
      edge(0, verb);
      if (transitive) edge(verb, noun_phrase(coin(0.5), false, nullptr));
      s.verb = verb;
      s.flipped_verb = plural ? v.singular : v.plural;
      s.tag = attractor ? "attractor" : "simple";
    }
    return s;
  }

 private:
  std::mt19937_64& rng_;
  ToySentence s;
};

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

}  // namespace

std::string ToySentence::text() const { return join(words); }

std::vector<ToySentence> generate_toy_sentences(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ToyBuilder builder(rng);
  std::vector<ToySentence> out;
  std::set<std::string> seen;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 1000 * (count + 1)) throw std::runtime_error("toy grammar exhausted");
    ToySentence s = builder.sentence();
    if (seen.insert(s.text()).second) out.push_back(std::move(s));
  }
  return out;
}

MinimalPair agreement_pair(const ToySentence& s) {
  std::vector<std::string> bad = s.words;
  bad.at(s.verb - 1) = s.flipped_verb;
  return {s.text(), join(bad), s.tag};
}

std::vector<MinimalPair> read_minimal_pairs(std::istream& in) {
  std::vector<MinimalPair> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      out.push_back({j.at("good").get<std::string>(), j.at("bad").get<std::string>(),
                     j.value("tag", std::string("untagged"))});
    } catch (const json::exception& e) {
      throw CorpusError("minimal pairs line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<MinimalPair> load_minimal_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  return read_minimal_pairs(in);
}

void save_minimal_pairs(const std::filesystem::path& path, const std::vector<MinimalPair>& pairs) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& p : pairs) out << json{{"good", p.good}, {"bad", p.bad}, {"tag", p.tag}}.dump() << '\n';
}

std::vector<CorpusExample> toy_corpus(const std::vector<ToySentence>& sentences,
                                      const Tokenizer& tokenizer) {
  std::vector<CorpusExample> out;
  int n = 0;
  for (const auto& s : sentences) {
    char id[32];
    std::snprintf(id, sizeof(id), "toy-%04d", ++n);
    CorpusExample ex = example_from_text(id, s.text(), tokenizer);
    ex.edges = s.edges;
    std::sort(ex.edges.begin(), ex.edges.end());
    validate_example(ex);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace gilt
