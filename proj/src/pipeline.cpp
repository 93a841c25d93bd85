#include "gilt/pipeline.hpp"

#include <fstream>

namespace gilt {

void save_bundle(const std::filesystem::path& dir, const ModelBundle& b) {
  std::filesystem::create_directories(dir);
  b.model->config().to_key_values().save(dir / "model.cfg");
  b.train.to_key_values().save(dir / "train.cfg");
  std::ofstream out(dir / "vocab.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "vocab.json").string());
  out << nlohmann::json{{"vocab", b.vocab.to_json()}, {"tokenizer", b.tokenizer.to_json()}}.dump(1)
      << '\n';
  ad::save_checkpoint(dir / "params.bin", b.model->params());
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("model directory " + dir.string() + " does not exist");
  }
  ModelBundle b;
  b.model = std::make_unique<GiLTModel>(GiLTConfig::from_key_values(KeyValueFile::load(dir / "model.cfg")));
  if (std::filesystem::exists(dir / "train.cfg")) {
    b.train = TrainConfig::from_key_values(KeyValueFile::load(dir / "train.cfg"));
  }
  std::ifstream in(dir / "vocab.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "vocab.json").string());
  nlohmann::json j = nlohmann::json::parse(in);
  b.vocab = Vocabulary::from_json(j.at("vocab"));
  b.tokenizer = Tokenizer::from_json(j.at("tokenizer"));
  if (b.vocab.size() != b.model->config().vocab_size) {
    throw std::runtime_error("vocabulary size does not match model.cfg");
  }
  ad::load_checkpoint(dir / "params.bin", b.model->params());
  return b;
}

std::vector<TrainingExample> encode_corpus(const std::vector<CorpusExample>& corpus,
                                           const Vocabulary& vocab) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) out.push_back(to_training_example(ex, vocab));
  return out;
}

std::vector<PreparedExample> prepare_corpus(const std::vector<CorpusExample>& corpus,
                                            const Vocabulary& vocab, const GiLTConfig& config) {
  CorpusReport report = corpus_report(corpus, config.tape);
  if (report.max_count > config.max_count) {
    throw CountOverflowError("corpus has a word with " + std::to_string(report.max_count) +
                             " dependencies on earlier words; max_count is " +
                             std::to_string(config.max_count) + ", raise it");
  }
  check_caps(report.features, config.tape.caps);
  if (report.max_tokens + 1 > config.max_positions) {
    throw std::invalid_argument("corpus sentences exceed max_positions");
  }
  std::vector<PreparedExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : encode_corpus(corpus, vocab)) {
    out.push_back(prepare_example(ex, config, Vocabulary::kEos));
  }
  return out;
}

Tokenizer fit_tokenizer(const std::vector<CorpusExample>& corpus, int min_word_freq,
                        int piece_size) {
  Tokenizer t(min_word_freq, piece_size);
  std::vector<std::string> texts;
  for (const auto& ex : corpus) {
    if (!ex.text.empty()) {
      texts.push_back(ex.text);
    } else {
      std::string joined;
      for (const auto& w : ex.words()) joined += (joined.empty() ? "" : " ") + w;
      texts.push_back(joined);
    }
  }
  t.fit(texts);
  return t;
}

}  // namespace gilt
