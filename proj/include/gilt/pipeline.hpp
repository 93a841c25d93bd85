#pragma once

// Glue between the corpus format, training and saved model directories.
//
// A model directory holds model.cfg, train.cfg, vocab.json (vocabulary and
// tokenizer) and params.bin.

#include <filesystem>
#include <memory>
#include <vector>

#include "gilt/corpus.hpp"
#include "gilt/model.hpp"
#include "gilt/train.hpp"

namespace gilt {

struct ModelBundle {
  std::unique_ptr<GiLTModel> model;
  Vocabulary vocab;
  Tokenizer tokenizer;
  TrainConfig train;
};

void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& dir);

// Checks max_count and the feature caps against the corpus, then encodes and
// precomputes tapes and targets for every example.
std::vector<PreparedExample> prepare_corpus(const std::vector<CorpusExample>& corpus,
                                            const Vocabulary& vocab, const GiLTConfig& config);

std::vector<TrainingExample> encode_corpus(const std::vector<CorpusExample>& corpus,
                                           const Vocabulary& vocab);

// Tokenizer refitted on the corpus texts.
Tokenizer fit_tokenizer(const std::vector<CorpusExample>& corpus, int min_word_freq,
                        int piece_size);

}  // namespace gilt
