#pragma once

// Toy-scale real-valued trainer and runtime for the mini-AUTOMAP:
// exact-digital and chip-simulated backends, MSE + |h| penalty loss,
// Adam optimization, per-layer error injection and the four
// numerical-domain ablation modes.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ocdc/lowering.hpp"
#include "ocdc/optics.hpp"

namespace ocdc::net {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LayerKind { FullyConnected, Conv2D, Deconv2D };
enum class Activation { Tanh, ReLU, None };
enum class DomainMode { CBD, CID, NCBD, InOn };
enum class Backend { Exact, ChipSim };

struct LayerSpec {
  LayerKind kind = LayerKind::FullyConnected;
  Activation activation = Activation::None;
  // FC
  int in_size = 0;
  int out_size = 0;
  // conv/deconv (square maps, stride 1, same padding)
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int map_size = 0;

  int input_dim() const;
  int output_dim() const;
};

/// FC weight: in_size x out_size. Conv/deconv weight: the im2col GEMM
/// matrix, (kernel^2 * in_channels) x out_channels, flatten order
/// (channel, kernel row, kernel column).
struct Layer {
  LayerSpec spec;
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

struct Network {
  std::vector<Layer> layers;
  int image_size = 0; // output is image_size^2 pixels

  /// FC(tanh) -> FC(tanh) -> Conv kxk ReLU -> Conv kxk ReLU ->
  /// Deconv 7x7 (none), Gaussian init with std 1/sqrt(fan_in).
  static Network mini_automap(int input_size, int image_size = 32,
                              int channels = 8, std::uint64_t seed = 0);

  int input_dim() const { return layers.front().spec.input_dim(); }
  int output_dim() const { return layers.back().spec.output_dim(); }
};

/// Additive Gaussian noise on every layer's linear output, by layer
/// kind. Zero stds reproduce the exact backend bit-for-bit.
struct ErrorInjection {
  double fc_std = 0.0;
  double conv_std = 0.0; // also covers the deconv layer
  std::uint64_t seed = 0;
};

struct ForwardResult {
  Eigen::MatrixXd output; // batch x N^2
  Eigen::MatrixXd h;      // batch x (K * N^2), second conv layer's maps
  std::vector<Eigen::MatrixXd> features; // post-activation, per layer
};

/// Rows of `input` are examples. ChipSim routes every linear layer
/// through lowering::execute_schedule on `chip`.
ForwardResult forward(const Network& net, const Eigen::MatrixXd& input,
                      Backend backend = Backend::Exact,
                      DomainMode mode = DomainMode::CBD,
                      const ErrorInjection& injection = {},
                      optics::ChipState* chip = nullptr);

/// (1/N^2) sum (y - y_hat)^2 + (lambda/(K N^2)) sum |h|, averaged over
/// the batch.
double loss(const Eigen::MatrixXd& output, const Eigen::MatrixXd& truth,
            const Eigen::MatrixXd& h, double lambda);

struct Gradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
};

struct BackwardResult {
  double loss = 0.0;
  Gradients grads;
};

/// Exact reverse-mode gradients of the full objective, |h| subgradient
/// at 0 taken as 0.
BackwardResult backward(const Network& net, const Eigen::MatrixXd& input,
                        const Eigen::MatrixXd& truth, double lambda,
                        DomainMode mode = DomainMode::CBD);

struct TrainConfig {
  double learning_rate = 2e-5;
  double decayed_rate = 2e-6;
  int decay_epoch = 170;
  int epochs = 200;
  int batch_size = 25;
  double lambda_penalty = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  TrainConfig config;
};

/// Adam with the configured decay schedule; deterministic per seed.
/// Throws NonFiniteLoss with diagnostics if the loss leaves the reals.
TrainLog train(Network& net, const Eigen::MatrixXd& train_inputs,
               const Eigen::MatrixXd& train_truths,
               const Eigen::MatrixXd& val_inputs,
               const Eigen::MatrixXd& val_truths, const TrainConfig& config,
               DomainMode mode = DomainMode::CBD);

/// Exact forward with i.i.d. noise on every linear output.
Eigen::VectorXd infer_with_injection(const Network& net,
                                     const Eigen::VectorXd& input,
                                     const ErrorInjection& injection);

} // namespace ocdc::net
