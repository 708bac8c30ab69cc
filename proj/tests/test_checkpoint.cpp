#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "kdiff/checkpoint.hpp"
#include "kdiff/toy.hpp"

using namespace kdiff;
using kdiff::test::expect_error;
using kdiff::test::read_bytes;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void check_state_equal(const TrainState& a, const TrainState& b) {
  CHECK(a.step == b.step);
  REQUIRE(a.bank.size() == b.bank.size());
  CHECK(bitwise_equal(a.bank.text_encoder, b.bank.text_encoder));
  for (int e = 0; e < a.bank.size(); ++e) {
    CHECK(bitwise_equal(a.bank.experts[e], b.bank.experts[e]));
    const auto& oa = a.expert_optimizers[e];
    const auto& ob = b.expert_optimizers[e];
    CHECK(oa.step == ob.step);
    REQUIRE(oa.m.size() == ob.m.size());
    for (std::size_t i = 0; i < oa.m.size(); ++i) {
      CHECK(bitwise_equal(oa.m[i], ob.m[i]));
      CHECK(bitwise_equal(oa.v[i], ob.v[i]));
    }
  }
  CHECK(a.text_optimizer.step == b.text_optimizer.step);
  for (std::size_t i = 0; i < a.text_optimizer.m.size(); ++i) CHECK(bitwise_equal(a.text_optimizer.v[i], b.text_optimizer.v[i]));
}

struct Trained {
  ToyProblem toy;
  TrainState state;
};

Trained trained_toy(int steps) {
  Trained t{toy_problem(3), {}};
  t.toy.config.train_steps = steps;
  Trainer trainer(t.toy.config, t.toy.vocab, t.toy.data);
  trainer.run();
  t.state = trainer.state();
  return t;
}

}  // namespace

TEST_CASE("f64 checkpoints round-trip bitwise") {
  const auto dir = kdiff::test::scratch_dir("ckpt_roundtrip");
  Trained t = trained_toy(3);
  t.toy.config.w_a = 0.25;
  t.toy.config.policy.p_cap = 0.3;
  t.toy.config.policy.append_labels = false;
  t.toy.config.denoiser.scale_mode = ScaleMode::Additive;
  save_checkpoint(dir / "a.ckpt", t.state, t.toy.config);
  const LoadedCheckpoint loaded = load_checkpoint(dir / "a.ckpt");
  CHECK(loaded.storage == StorageMode::Float64);
  check_state_equal(loaded.state, t.state);
  const TrainConfig& c = loaded.config;
  CHECK(c.schedule_steps == t.toy.config.schedule_steps);
  CHECK(c.experts == t.toy.config.experts);
  CHECK(c.w_a == 0.25);
  CHECK(c.w_l == t.toy.config.w_l);
  CHECK(c.policy.p_cap == 0.3);
  CHECK_FALSE(c.policy.append_labels);
  CHECK(c.denoiser.scale_mode == ScaleMode::Additive);
  CHECK(c.denoiser.d_model == t.toy.config.denoiser.d_model);
  CHECK(c.text.vocab_size == t.toy.config.text.vocab_size);
  CHECK(c.seed == t.toy.config.seed);
  CHECK(c.adam.lr == t.toy.config.adam.lr);
  // Saving the loaded state again reproduces the file exactly.
  save_checkpoint(dir / "b.ckpt", loaded.state, loaded.config);
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
  CHECK(checkpoint_hash(dir / "a.ckpt") == checkpoint_hash(dir / "b.ckpt"));
  CHECK(checkpoint_hash(dir / "a.ckpt").size() == 8);
}

TEST_CASE("f32 storage rounds every value to float") {
  const auto dir = kdiff::test::scratch_dir("ckpt_f32");
  const Trained t = trained_toy(2);
  save_checkpoint(dir / "f.ckpt", t.state, t.toy.config, StorageMode::Float32);
  const LoadedCheckpoint loaded = load_checkpoint(dir / "f.ckpt");
  CHECK(loaded.storage == StorageMode::Float32);
  const auto& a = t.state.bank.experts[0].entries();
  const auto& b = loaded.state.bank.experts[0].entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].second.numel(); ++j) {
      CHECK(b[i].second[j] == static_cast<double>(static_cast<float>(a[i].second[j])));
    }
  }
  CHECK(fs::file_size(dir / "f.ckpt") < 0.6 * [&] {
    save_checkpoint(dir / "d.ckpt", t.state, t.toy.config);
    return double(fs::file_size(dir / "d.ckpt"));
  }());
}

TEST_CASE("corrupt checkpoints raise the matching error") {
  const auto dir = kdiff::test::scratch_dir("ckpt_corrupt");
  const Trained t = trained_toy(1);
  save_checkpoint(dir / "good.ckpt", t.state, t.toy.config);
  const auto good = read_bytes(dir / "good.ckpt");

  auto bad = good;
  bad[0] = 'X';
  write_bytes(dir / "magic.ckpt", bad);
  expect_error(ErrorKind::BadMagic, [&] { load_checkpoint(dir / "magic.ckpt"); });

  bad = good;
  bad[4] = 2;
  write_bytes(dir / "version.ckpt", bad);
  expect_error(ErrorKind::VersionUnsupported, [&] { load_checkpoint(dir / "version.ckpt"); });

  for (std::size_t cut : {std::size_t{8}, std::size_t{40}, good.size() / 2, good.size() - 5, good.size() - 1}) {
    write_bytes(dir / "short.ckpt", good.substr(0, cut));
    expect_error(ErrorKind::TruncatedFile, [&] { load_checkpoint(dir / "short.ckpt"); });
  }

  // Flip one bit inside the last parameter blob.
  bad = good;
  bad[good.size() - 12] ^= 0x10;
  write_bytes(dir / "crc.ckpt", bad);
  expect_error(ErrorKind::ChecksumMismatch, [&] { load_checkpoint(dir / "crc.ckpt"); });
  CHECK(checkpoint_hash(dir / "crc.ckpt") != checkpoint_hash(dir / "good.ckpt"));

  expect_error(ErrorKind::IoError, [&] { load_checkpoint(dir / "missing.ckpt"); });
}

TEST_CASE("resuming from a checkpoint continues exactly") {
  const auto dir = kdiff::test::scratch_dir("ckpt_resume");
  ToyProblem toy = toy_problem(12);
  toy.config.warmup_steps = 1;
  toy.config.train_steps = 5;
  Trainer straight(toy.config, toy.vocab, toy.data);
  straight.run();

  TrainConfig first = toy.config;
  first.train_steps = 2;
  Trainer part(first, toy.vocab, toy.data);
  part.run();
  save_checkpoint(dir / "mid.ckpt", part.state(), part.config());
  LoadedCheckpoint loaded = load_checkpoint(dir / "mid.ckpt");
  loaded.config.train_steps = 5;
  Trainer resumed(loaded.config, toy.vocab, toy.data, loaded.state);
  resumed.run();
  check_state_equal(resumed.state(), straight.state());
  const auto& full = straight.loss_history();
  std::vector<double> tail(full.begin() + 3, full.end());
  CHECK(resumed.loss_history() == tail);
}

TEST_CASE("a failed write leaves the earlier checkpoint intact") {
  const auto dir = kdiff::test::scratch_dir("ckpt_failure");
  const Trained t = trained_toy(1);
  save_checkpoint(dir / "model.ckpt", t.state, t.toy.config);
  const auto before = read_bytes(dir / "model.ckpt");
  // A directory squatting on the temporary name makes the write fail.
  fs::create_directories(dir / "model.ckpt.tmp");
  const Trained later = trained_toy(2);
  expect_error(ErrorKind::IoError, [&] { save_checkpoint(dir / "model.ckpt", later.state, later.toy.config); });
  CHECK(read_bytes(dir / "model.ckpt") == before);
  check_state_equal(load_checkpoint(dir / "model.ckpt").state, t.state);
  expect_error(ErrorKind::IoError, [&] { save_checkpoint(dir / "no" / "such" / "dir.ckpt", t.state, t.toy.config); });
}

TEST_CASE("periodic checkpoints are written during training") {
  const auto dir = kdiff::test::scratch_dir("ckpt_periodic");
  ToyProblem toy = toy_problem(2);
  toy.config.train_steps = 4;
  toy.config.checkpoint_every = 2;
  toy.config.checkpoint_dir = dir;
  Trainer t(toy.config, toy.vocab, toy.data);
  t.run();
  CHECK(fs::exists(dir / "step-2.ckpt"));
  CHECK(fs::exists(dir / "step-4.ckpt"));
  CHECK(load_checkpoint(dir / "step-2.ckpt").state.step == 2);
  check_state_equal(load_checkpoint(dir / "step-4.ckpt").state, t.state());
}
