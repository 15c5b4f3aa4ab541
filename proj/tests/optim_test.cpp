//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "polyseq/checkpoint.h"
#include "polyseq/error.h"
#include "polyseq/io.h"
#include "polyseq/optim.h"
#include "support.h"

namespace polyseq {
namespace {

using T64 = tensor::Tensor<double>;

ParamStore<double> single(double value, double grad) {
  ParamStore<double> p;
  T64 &t = p.add("w", T64({1}, {value}));
  t.mutable_grad()[0] = grad;
  return p;
}

std::vector<ParamGroup> all_at(const ParamStore<double> &p, double lr) {
  return {{"all", lr, p.names()}};
}

TEST(AdamW, FirstStepClosedForm) {
  ParamStore<double> p = single(0.0, 1.0);
  AdamW<double> opt({0.9, 0.999, 1e-6, 0.0, 0.0});
  opt.init(p);
  opt.step(p, all_at(p, 0.1));
  EXPECT_NEAR(p.at("w").data()[0], -0.1 / (1.0 + 1e-6), 1e-15);
}

TEST(AdamW, ZeroGradientNoDecay) {
  ParamStore<double> p = single(0.7, 0.0);
  AdamW<double> opt;
  opt.init(p);
  opt.step(p, all_at(p, 0.1));
  EXPECT_EQ(p.at("w").data()[0], 0.7);
}

TEST(AdamW, DecayOnlyStep) {
  ParamStore<double> p = single(1.0, 0.0);
  AdamW<double> opt({0.9, 0.999, 1e-6, 0.01, 0.0});
  opt.init(p);
  opt.step(p, all_at(p, 0.1));
  EXPECT_NEAR(p.at("w").data()[0], 0.999, 1e-15);
}

TEST(AdamW, ZeroLearningRateLeavesParameters) {
  ParamStore<double> p = single(1.5, 3.0);
  AdamW<double> opt({0.9, 0.999, 1e-6, 0.5, 0.0});
  opt.init(p);
  opt.step(p, all_at(p, 0.0));
  EXPECT_EQ(p.at("w").data()[0], 1.5);
}

TEST(AdamW, UninitializedIsStateError) {
  ParamStore<double> p = single(0.0, 1.0);
  AdamW<double> opt;
  EXPECT_THROW(opt.step(p, all_at(p, 0.1)), StateError);
}

TEST(AdamW, PerGroupLearningRates) {
  ParamStore<double> p;
  p.add("a", T64({1}, {0.0})).mutable_grad()[0] = 1.0;
  p.add("b", T64({1}, {0.0})).mutable_grad()[0] = 1.0;
  AdamW<double> opt;
  opt.init(p);
  opt.step(p, {{"fast", 0.1, {"a"}}, {"slow", 0.01, {"b"}}});
  EXPECT_NEAR(p.at("a").data()[0], -0.1 / (1.0 + 1e-6), 1e-15);
  EXPECT_NEAR(p.at("b").data()[0], -0.01 / (1.0 + 1e-6), 1e-15);
}

// Reference Adam, written out independently.
std::vector<double> adam_reference(std::vector<double> theta,
                                   const std::vector<std::vector<double>> &grads,
                                   double lr, double b1, double b2, double eps) {
  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0);
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grads[t - 1][i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      theta[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  return theta;
}

TEST(AdamW, NoDecayMatchesAdam) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::vector<double> theta0(8);
  for (double &x: theta0)
    x = n(rng);
  std::vector<std::vector<double>> grads(25, std::vector<double>(8));
  for (auto &g: grads)
    for (double &x: g)
      x = n(rng);

  ParamStore<double> p;
  p.add("w", T64({8}, theta0));
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.0, 0.0});
  opt.init(p);
  for (const auto &g: grads) {
    p.zero_grad();
    std::copy(g.begin(), g.end(), p.at("w").mutable_grad().begin());
    opt.step(p, all_at(p, 0.01));
  }
  const auto expect = adam_reference(theta0, grads, 0.01, 0.9, 0.999, 1e-8);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_NEAR(p.at("w").data()[i], expect[i], 1e-12);
  EXPECT_EQ(opt.step_count(), 25);
}

TEST(AdamW, ClippingScalesGradients) {
  // With clipping the first step direction is unchanged (Adam normalizes),
  // but the moments see the clipped gradient.
  ParamStore<double> p;
  p.add("w", T64({2}, {0.0, 0.0}));
  p.at("w").mutable_grad()[0] = 3.0;
  p.at("w").mutable_grad()[1] = 4.0;
  EXPECT_DOUBLE_EQ(grad_norm(p), 5.0);
  AdamW<double> opt({0.9, 0.999, 1e-6, 0.0, 1.0});
  opt.init(p);
  opt.step(p, all_at(p, 0.1));
  EXPECT_NEAR(opt.first_moments().at("w")[0], 0.1 * 0.6, 1e-12);
  EXPECT_NEAR(opt.first_moments().at("w")[1], 0.1 * 0.8, 1e-12);
}

TEST(ParamStore, Contract) {
  ParamStore<double> p;
  p.add("x", T64({2, 3}, std::vector<double>(6, 1.0)));
  EXPECT_TRUE(p.at("x").requires_grad());
  EXPECT_THROW(p.add("x", T64({1}, {0.0})), NameError);
  EXPECT_THROW(p.at("y"), NameError);
  EXPECT_EQ(p.num_parameters(), 6u);
  ParamStore<double> c = p.clone();
  c.at("x").data()[0] = 5.0;
  EXPECT_EQ(p.at("x").data()[0], 1.0);
}

TEST(ParamStore, EncoderLayerIndex) {
  EXPECT_EQ(encoder_layer_index("enc.0.attn.q_proj.weight"), 0);
  EXPECT_EQ(encoder_layer_index("enc.11.ffn.fc1.bias"), 11);
  EXPECT_FALSE(encoder_layer_index("embed.tokens.weight"));
  EXPECT_FALSE(encoder_layer_index("enc.x.attn"));
}

TEST(Checkpoint, RoundTrip) {
  testing::ScratchDir dir("ckpt");
  Checkpoint ckpt;
  ckpt.meta["kind"] = "pretrain";
  ckpt.meta["config"] = {{"d_model", 8}, {"lr", 0.001}};
  ckpt.tensors["a"] = {{2, 2}, DType::kF32, {1.5, -2.25, 3.0, 0.1f}};
  ckpt.tensors["b"] = {{3}, DType::kF64, {0.1, 1e-300, -7.0}};
  ckpt.tensors["s"] = {{}, DType::kF64, {42.0}};
  ckpt.save(dir / "x.ckpt");

  const Checkpoint back = Checkpoint::load(dir / "x.ckpt");
  EXPECT_EQ(back.meta, ckpt.meta);
  ASSERT_EQ(back.tensors.size(), 3u);
  for (const auto &[name, t]: ckpt.tensors) {
    const StoredTensor &u = back.tensors.at(name);
    EXPECT_EQ(u.shape, t.shape) << name;
    EXPECT_EQ(u.dtype, t.dtype) << name;
    EXPECT_EQ(u.values, t.values) << name;
  }
  for (const auto &entry: std::filesystem::directory_iterator(dir.path()))
    EXPECT_EQ(entry.path().filename(), "x.ckpt");
}

TEST(Checkpoint, HeaderMagic) {
  testing::ScratchDir dir("ckpt");
  Checkpoint().save(dir / "e.ckpt");
  const std::string text = read_file(dir / "e.ckpt");
  EXPECT_EQ(text.rfind(Checkpoint::kMagic, 0), 0u);
}

TEST(Checkpoint, LoadErrors) {
  testing::ScratchDir dir("ckpt");
  EXPECT_THROW(Checkpoint::load(dir / "missing.ckpt"), IoError);
  write_file_atomic(dir / "bad.ckpt", "not a checkpoint\n");
  EXPECT_THROW(Checkpoint::load(dir / "bad.ckpt"), IoError);

  Checkpoint ckpt;
  ckpt.tensors["a"] = {{4}, DType::kF64, {1, 2, 3, 4}};
  ckpt.save(dir / "t.ckpt");
  std::string text = read_file(dir / "t.ckpt");
  write_file_atomic(dir / "t.ckpt", text.substr(0, text.size() - 5));
  EXPECT_THROW(Checkpoint::load(dir / "t.ckpt"), IoError);
}

TEST(Checkpoint, ParamsAndOptimizer) {
  testing::ScratchDir dir("ckpt");
  ParamStore<float> p;
  p.add("w", tensor::Tensor<float>({3}, {0.1f, -0.2f, 0.3f}));
  p.at("w").mutable_grad()[1] = 1.0f;
  AdamW<float> opt;
  opt.init(p);
  opt.step(p, {{"all", 0.01, {"w"}}});

  Checkpoint ckpt;
  put_params(ckpt, p);
  put_optimizer(ckpt, opt, p);
  ckpt.save(dir / "p.ckpt");
  const Checkpoint back = Checkpoint::load(dir / "p.ckpt");

  ParamStore<float> q;
  q.add("w", tensor::Tensor<float>::zeros({3}));
  EXPECT_EQ(get_params(back, q, true), std::vector<std::string> {"w"});
  for (int i = 0; i < 3; ++i)
    EXPECT_EQ(q.at("w").data()[i], p.at("w").data()[i]);

  AdamW<float> opt2;
  get_optimizer(back, opt2);
  EXPECT_EQ(opt2.step_count(), 1);
  EXPECT_EQ(opt2.first_moments().at("w"), opt.first_moments().at("w"));
  EXPECT_EQ(opt2.second_moments().at("w"), opt.second_moments().at("w"));

  ParamStore<float> wrong;
  wrong.add("w", tensor::Tensor<float>::zeros({4}));
  EXPECT_THROW(get_params(back, wrong, true), StateError);
  ParamStore<float> extra;
  extra.add("w", tensor::Tensor<float>::zeros({3}));
  extra.add("v", tensor::Tensor<float>::zeros({1}));
  EXPECT_THROW(get_params(back, extra, true), StateError);
  EXPECT_EQ(get_params(back, extra, false), std::vector<std::string> {"w"});
}

TEST(Io, AtomicWriteReplaces) {
  testing::ScratchDir dir("io");
  write_file_atomic(dir / "sub" / "f.txt", "one");
  write_file_atomic(dir / "sub" / "f.txt", "two");
  EXPECT_EQ(read_file(dir / "sub" / "f.txt"), "two");
  int files = 0;
  for ([[maybe_unused]] const auto &e:
       std::filesystem::directory_iterator(dir / "sub"))
    ++files;
  EXPECT_EQ(files, 1);
}

TEST(Io, WorkerThreadsFromEnvironment) {
  ::setenv("POLYSEQ_THREADS", "3", 1);
  EXPECT_EQ(worker_threads(), 3);
  ::unsetenv("POLYSEQ_THREADS");
  EXPECT_GE(worker_threads(), 1);
}

}  // namespace
}  // namespace polyseq
