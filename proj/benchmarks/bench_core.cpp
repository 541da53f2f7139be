#include <benchmark/benchmark.h>

#include "ivt/alignment.hpp"
#include "ivt/dataset.hpp"
#include "ivt/evaluation.hpp"
#include "ivt/training.hpp"

using namespace ivt;

namespace {

struct BenchSetup {
  Corpus corpus;
  Vocab vocab;
  EncoderConfig model;
  ParamStore params;
  PosLexicon lexicon = PosLexicon::builtin();

  static BenchSetup& instance() {
    static BenchSetup setup;
    return setup;
  }

 private:
  BenchSetup()
      : corpus(generate_corpus(GeneratorParams{}, 7)),
        vocab([&] {
          std::vector<std::string> captions;
          for (const auto& pair : corpus.train.pairs) captions.push_back(pair.caption);
          return build_vocab(captions, 1);
        }()),
        model(EncoderConfig::desk_preset(vocab.size())),
        params(make_encoder_layout(model)) {
    init_encoder_params(params, 1);
  }
};

void BM_EncodeImageBatch(benchmark::State& state) {
  auto& s = BenchSetup::instance();
  const int batch = static_cast<int>(state.range(0));
  std::vector<PatchSequence> patches;
  for (int i = 0; i < batch; ++i) {
    patches.push_back(
        patchify(*s.corpus.train.pairs[static_cast<std::size_t>(i)].image, s.model.patch_size));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode_image_batch(patches, {}, s.params, s.model, nullptr));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_EncodeImageBatch)->Arg(1)->Arg(32);

void BM_EncodeTextBatch(benchmark::State& state) {
  auto& s = BenchSetup::instance();
  const int batch = static_cast<int>(state.range(0));
  std::vector<TokenSequence> tokens;
  for (int i = 0; i < batch; ++i) {
    tokens.push_back(tokenize(s.corpus.train.pairs[static_cast<std::size_t>(i)].caption, s.vocab,
                              s.model.max_text_len));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode_text_batch(tokens, s.params, s.model, nullptr));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_EncodeTextBatch)->Arg(1)->Arg(32);

void BM_TrainingStepWithGradients(benchmark::State& state) {
  auto& s = BenchSetup::instance();
  const Batch batch = sample_batch(s.corpus.train, 32, 1, 0);
  AlignmentConfig acfg;
  ParamStore grads(s.params.layout_ptr());
  std::uint64_t step = 0;
  for (auto _ : state) {
    grads.set_zero();
    benchmark::DoNotOptimize(training_step_grads(batch, s.params, s.model, acfg, s.vocab,
                                                 s.lexicon, derive_seed(1, 32, step++), grads));
  }
}
BENCHMARK(BM_TrainingStepWithGradients);

void BM_CmpmTotalGrad(benchmark::State& state) {
  const int b = static_cast<int>(state.range(0));
  Mat f_img(b, 64), f_txt(b, 64);
  Rng rng(3);
  for (int r = 0; r < b; ++r) {
    for (int c = 0; c < 64; ++c) {
      f_img(r, c) = rng.normal();
      f_txt(r, c) = rng.normal();
    }
  }
  std::vector<int> labels;
  for (int i = 0; i < b; ++i) labels.push_back(i / 2);
  Mat d_img(b, 64), d_txt(b, 64);
  for (auto _ : state) {
    d_img.setZero();
    d_txt.setZero();
    benchmark::DoNotOptimize(cmpm_total_grad(f_img, f_txt, labels, 1e-8, true, d_img, d_txt));
  }
}
BENCHMARK(BM_CmpmTotalGrad)->Arg(32)->Arg(128);

void BM_CmcAndMap(benchmark::State& state) {
  const int q = 128, g = 256;
  Rng rng(5);
  SimilarityMatrix sim;
  sim.scores.resize(q, g);
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < g; ++j) sim.scores(i, j) = rng.uniform();
  }
  for (int j = 0; j < g; ++j) sim.gallery_labels.push_back(j % 32);
  for (int i = 0; i < q; ++i) sim.query_labels.push_back(i % 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cmc(sim, {1, 5, 10}));
    benchmark::DoNotOptimize(mean_average_precision(sim));
  }
}
BENCHMARK(BM_CmcAndMap);

void BM_GenerateCorpus(benchmark::State& state) {
  GeneratorParams p;
  p.n_identities = 16;
  p.images_per_id = 2;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_corpus(p, 3));
  }
}
BENCHMARK(BM_GenerateCorpus);

}  // namespace

BENCHMARK_MAIN();
