#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>

#include "sf/trainer.hpp"

using namespace sf;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir;
  std::unique_ptr<WindowSampler> sampler;
  std::unique_ptr<MixtureSampler> mix;

  explicit Fixture(const std::string& tag) {
    dir = fs::temp_directory_path() / ("sf-trainer-" + tag + "-" + std::to_string(std::random_device{}()));
    CorpusSpec spec;
    spec.count = 8;
    spec.length = 300;
    spec.seed = 3;
    sampler = std::make_unique<WindowSampler>(build_shards(make_corpus(spec), kMiB, dir, 1), 2, 4, 1);
    mix = std::make_unique<MixtureSampler>(std::vector<WindowSampler*>{sampler.get()}, std::vector<double>{1.0});
  }
  ~Fixture() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

TrainConfig small_run(Index steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 3;
  c.peak_lr = 3e-3;
  c.seed = 11;
  c.log_every = 0;
  return c;
}

template <class S>
double max_abs_diff(const ModelParams<S>& a, const ModelParams<S>& b) {
  double worst = 0;
  zip_tensors([&](const std::string&, const auto& x, const auto& y) {
    worst = std::max(worst, double((x - y).cwiseAbs().maxCoeff()));
  }, a, b);
  return worst;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.steps = 1000;
  c.peak_lr = 1e-3;
  CHECK(learning_rate(c, 0) > 0.0);
  CHECK(learning_rate(c, 0) < learning_rate(c, 10));
  CHECK(learning_rate(c, 29) == doctest::Approx(1e-3));
  CHECK(learning_rate(c, 999) == doctest::Approx(1e-4));
  for (Index s = 30; s < 999; ++s) CHECK(learning_rate(c, s + 1) <= learning_rate(c, s));
}

TEST_CASE("training windows are normalized by their context") {
  std::vector<double> w(24);
  for (std::size_t t = 0; t < w.size(); ++t) w[t] = t < 16 ? (t % 2 ? 1.0 : 3.0) : 100.0;
  auto p = prepare_window<double>(w, 4, 4);
  CHECK(p.count() == 6);
  CHECK(p.values.topRows(4).cwiseAbs().maxCoeff() == doctest::Approx(1.0));
  CHECK(p.values(5, 3) == doctest::Approx(98.0));
}

TEST_CASE("optimizer invariants") {
  const auto config = ModelConfig::tiny_reference();
  auto params = ModelParams<double>::init(config, 1);
  const auto before = params;
  auto state = OptimizerState<double>::zeros(config);
  TrainConfig tc;
  tc.weight_decay = 0.0;
  adamw_update(params, ModelParams<double>::zeros(config), state, tc, 1e-2);
  CHECK(max_abs_diff(params, before) == 0.0);

  auto grads = ModelParams<double>::init(config, 2);
  const double norm = global_norm(grads);
  auto same = grads;
  CHECK(clip_global_norm(same, std::numeric_limits<double>::infinity()) == doctest::Approx(norm));
  CHECK(max_abs_diff(same, grads) == 0.0);
  for (double limit : {norm * 2, norm / 3, 1e-3}) {
    auto g = grads;
    clip_global_norm(g, limit);
    CHECK(global_norm(g) <= std::max(norm, 0.0) + 1e-12);
    CHECK(global_norm(g) <= limit * (1 + 1e-12));
  }
}

TEST_CASE("lr = 0 leaves parameters unchanged") {
  Fixture fx("lr0");
  auto tc = small_run(2);
  tc.peak_lr = 0.0;
  auto run = run_pretrain<double>(ModelConfig::tiny_reference(), tc, *fx.mix);
  CHECK(max_abs_diff(run.params, ModelParams<double>::init(ModelConfig::tiny_reference(), tc.seed)) == 0.0);
  REQUIRE(run.history.size() == 2);
  CHECK(std::isfinite(run.history[0].loss.total));
  CHECK(run.history[0].loss.total > 0.0);
}

TEST_CASE("batches depend only on seed and step; workers do not change results") {
  Fixture fx("det");
  const auto model = ModelConfig::tiny_reference();
  const auto tc = small_run(4);
  const auto a = training_batch<double>(*fx.mix, model, tc, 3);
  const auto b = training_batch<double>(*fx.mix, model, tc, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].values == b[i].values);

  const auto params = ModelParams<double>::init(model, 5);
  const auto weights = stp_weights(model.stp_blocks, Stage::Pretrain);
  auto g1 = ModelParams<double>::zeros(model), g3 = ModelParams<double>::zeros(model);
  const auto l1 = batch_objective<double>(params, a, model.max_patches, weights, 0.01, &g1, 1);
  const auto l3 = batch_objective<double>(params, a, model.max_patches, weights, 0.01, &g3, 3);
  CHECK(l1.total == l3.total);
  CHECK(max_abs_diff(g1, g3) == 0.0);

  const auto r1 = run_pretrain<float>(ModelConfig::tiny_reference(), tc, *fx.mix);
  const auto r2 = run_pretrain<float>(ModelConfig::tiny_reference(), tc, *fx.mix);
  for (std::size_t i = 0; i < r1.history.size(); ++i) CHECK(r1.history[i].loss.total == r2.history[i].loss.total);
  CHECK(max_abs_diff(r1.params, r2.params) == 0.0);
}

TEST_CASE("non-finite steps are skipped") {
  Fixture fx("skip");
  const auto model = ModelConfig::tiny_reference();
  auto tc = small_run(1);
  auto params = ModelParams<double>::init(model, 1);
  params.head.b(0) = std::numeric_limits<double>::infinity();
  const auto before = params;
  auto state = OptimizerState<double>::zeros(model);
  const auto batch = training_batch<double>(*fx.mix, model, tc, 0);
  const auto r = train_step(params, state, batch, tc);
  CHECK(r.skipped);
  CHECK(state.step == 0);
  CHECK(state.m.head.w.isZero(0.0));
  zip_tensors([&](const std::string&, const auto& x, const auto& y) { CHECK((x.array() == y.array()).all()); },
              params, before);
}

TEST_CASE("checkpoints") {
  Fixture fx("ckpt");
  const auto model = ModelConfig::tiny_reference();
  auto tc = small_run(3);
  const auto run = run_pretrain<double>(model, tc, *fx.mix);
  const auto p1 = fx.dir / "a.sfck", p2 = fx.dir / "b.sfck";
  save_checkpoint(p1, run.params, &run.state, tc.to_text());
  const auto ck = load_checkpoint<double>(p1, &model);
  REQUIRE(ck.optimizer);
  CHECK(ck.optimizer->step == 3);
  CHECK(ck.train_config == tc.to_text());
  save_checkpoint(p2, ck.params, &*ck.optimizer, ck.train_config);
  CHECK(slurp(p1) == slurp(p2));

  // steps = 0 stores the initialization.
  auto zero = small_run(0);
  const auto init = run_pretrain<double>(model, zero, *fx.mix);
  CHECK(max_abs_diff(init.params, ModelParams<double>::init(model, zero.seed)) == 0.0);

  // Precision conversion on load.
  const auto as_float = load_checkpoint<float>(p1);
  CHECK(as_float.stored_dtype == 8);
  CHECK(as_float.params.head.w(0, 0) == float(run.params.head.w(0, 0)));

  // Truncation and corruption.
  const auto bytes = slurp(p1);
  for (std::size_t keep : {std::size_t(3), std::size_t(40), bytes.size() / 2, bytes.size() - 1}) {
    std::ofstream(p2, std::ios::binary | std::ios::trunc).write(bytes.data(), std::streamsize(keep));
    CHECK_THROWS_AS(load_checkpoint<double>(p2), CheckpointError);
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  std::ofstream(p2, std::ios::binary | std::ios::trunc).write(flipped.data(), std::streamsize(flipped.size()));
  CHECK_THROWS_AS(load_checkpoint<double>(p2), CheckpointError);

  // A different shape names the first tensor that differs.
  auto other = model;
  other.experts = 3;
  try {
    load_checkpoint<double>(p1, &other);
    FAIL("mismatched config loaded");
  } catch (const CheckpointError& e) {
    const std::string what = e.what();
    CHECK(what.find("main.0.moe.router") != std::string::npos);
    CHECK(what.find("experts") != std::string::npos);
  }
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  Fixture fx("resume");
  const auto model = ModelConfig::tiny_reference();
  const auto tc = small_run(6);
  const auto full = run_pretrain<double>(model, tc, *fx.mix);

  auto half_cfg = tc;
  TrainHooks hooks;
  hooks.checkpoint_dir = fx.dir / "ck";
  half_cfg.checkpoint_every = 3;
  run_pretrain<double>(model, half_cfg, *fx.mix, hooks);
  auto ck = load_checkpoint<double>(fx.dir / "ck" / "step-3.sfck", &model);
  REQUIRE(ck.optimizer);
  const auto resumed = train_loop<double>(ck.params, *ck.optimizer, *fx.mix, tc);
  CHECK(resumed.state.step == 6);
  CHECK(max_abs_diff(resumed.params, full.params) == 0.0);
  for (std::size_t i = 0; i < resumed.history.size(); ++i)
    CHECK(resumed.history[i].loss.total == full.history[3 + i].loss.total);
}

TEST_CASE("context extension") {
  auto big = ModelConfig::large();
  CHECK(big.max_patches * big.patch_len == 2880);
  CHECK(big.max_patches == 180);
  CHECK(11520 / big.patch_len == 720);

  const auto model = ModelConfig::tiny_reference();
  const auto params = ModelParams<double>::init(model, 4);
  const auto wide = extend_context(params, 4 * model.max_patches);
  CHECK(wide.config.max_patches == 16);
  CHECK_THROWS_AS(extend_context(params, 2), ConfigError);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  std::vector<double> s(static_cast<std::size_t>(16 * model.patch_len));
  for (auto& v : s) v = n(rng);
  const auto patches = patchify<double>(s, model.patch_len);
  const auto old_out = forward_sequence(params, patches, 4, 2);
  const auto new_out = forward_sequence(wide, patches, 4, 2);
  for (std::size_t l = 0; l < old_out.levels.size(); ++l) CHECK(old_out.levels[l] == new_out.levels[l]);
  CHECK_THROWS_AS(forward_sequence(params, patches, 16, 2), ContextLengthError);

  const auto ref = forward_sequence(wide, patches, 16, 2);
  auto moved = patches;
  moved.values.row(9).array() += 1.0;
  const auto out = forward_sequence(wide, moved, 16, 2);
  for (std::size_t l = 0; l < out.levels.size(); ++l) CHECK(out.levels[l].topRows(9) == ref.levels[l].topRows(9));
}

TEST_CASE("gradient-check harness") {
  GradCheckOptions opt;
  opt.corrupt = [](ModelParams<double>& g) { g.head.w(0, 0) += 1.0; };
  const auto reports = gradient_check_suite(ModelConfig::tiny_reference(), opt);
  bool head_failed = false;
  for (const auto& r : reports)
    if (r.param_name == "head") head_failed = !r.passed;
  CHECK(head_failed);

  // Temperature gradient is nonzero on a random batch.
  const auto model = ModelConfig::tiny_reference();
  const auto params = ModelParams<double>::init(model, 3);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  std::vector<Patches<double>> windows;
  for (int b = 0; b < 2; ++b) {
    std::vector<double> w(static_cast<std::size_t>((model.max_patches + model.stp_blocks + 1) * model.patch_len));
    for (std::size_t t = 0; t < w.size(); ++t) w[t] = std::sin(0.5 * double(t)) + 0.3 * n(rng);
    windows.push_back(prepare_window<double>(w, model.max_patches, model.patch_len));
  }
  auto g = ModelParams<double>::zeros(model);
  batch_objective<double>(params, windows, model.max_patches, stp_weights(model.stp_blocks, Stage::Pretrain), 0.01,
                          &g);
  CHECK(g.main[0].attn.tau_logit.cwiseAbs().maxCoeff() > 0.0);
}
