#include "ocdc/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ocdc::net {

namespace {

bool is_conv_like(LayerKind kind) {
  return kind == LayerKind::Conv2D || kind == LayerKind::Deconv2D;
}

Activation effective_activation(const LayerSpec& spec, DomainMode mode) {
  if (mode == DomainMode::NCBD && spec.activation == Activation::Tanh) {
    return Activation::ReLU;
  }
  return spec.activation;
}

bool abs_linear_output(DomainMode mode) {
  return mode == DomainMode::CID || mode == DomainMode::InOn;
}

Eigen::MatrixXd apply_activation(const Eigen::MatrixXd& t, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return t.array().tanh();
    case Activation::ReLU:
      return t.cwiseMax(0.0);
    case Activation::None:
      return t;
  }
  return t;
}

Eigen::MatrixXd activation_derivative(const Eigen::MatrixXd& t,
                                      const Eigen::MatrixXd& a,
                                      Activation act) {
  switch (act) {
    case Activation::Tanh:
      return 1.0 - a.array().square();
    case Activation::ReLU:
      return (t.array() > 0.0).cast<double>();
    case Activation::None:
      return Eigen::MatrixXd::Ones(t.rows(), t.cols());
  }
  return Eigen::MatrixXd::Ones(t.rows(), t.cols());
}

// Gather table mapping (patch row, output position) to the flattened
// channel-major feature index, -1 for zero padding.
Eigen::MatrixXi patch_indices(const LayerSpec& spec) {
  const int n = spec.map_size, k = spec.kernel, pad = (k - 1) / 2;
  Eigen::MatrixXi idx(k * k * spec.in_channels, n * n);
  for (int oi = 0; oi < n; ++oi) {
    for (int oj = 0; oj < n; ++oj) {
      const int pos = oi * n + oj;
      int row = 0;
      for (int c = 0; c < spec.in_channels; ++c) {
        for (int di = 0; di < k; ++di) {
          for (int dj = 0; dj < k; ++dj, ++row) {
            const int i = oi + di - pad, j = oj + dj - pad;
            idx(row, pos) =
                (i >= 0 && i < n && j >= 0 && j < n) ? c * n * n + i * n + j
                                                     : -1;
          }
        }
      }
    }
  }
  return idx;
}

Eigen::MatrixXd gather_patches(const Eigen::VectorXd& flat,
                               const Eigen::MatrixXi& idx) {
  Eigen::MatrixXd p(idx.rows(), idx.cols());
  for (int col = 0; col < idx.cols(); ++col) {
    for (int row = 0; row < idx.rows(); ++row) {
      const int src = idx(row, col);
      p(row, col) = src >= 0 ? flat[src] : 0.0;
    }
  }
  return p;
}

lower::KernelStack kernels_from_weight(const LayerSpec& spec,
                                       const Eigen::MatrixXd& weight) {
  lower::KernelStack ks(spec.out_channels);
  for (int o = 0; o < spec.out_channels; ++o) {
    ks[o].resize(spec.in_channels);
    int row = 0;
    for (int c = 0; c < spec.in_channels; ++c) {
      Eigen::MatrixXd kk(spec.kernel, spec.kernel);
      for (int di = 0; di < spec.kernel; ++di)
        for (int dj = 0; dj < spec.kernel; ++dj, ++row)
          kk(di, dj) = weight(row, o);
      ks[o][c] = kk;
    }
  }
  return ks;
}

lower::FeatureMap feature_map_from_row(const Eigen::VectorXd& flat,
                                       const LayerSpec& spec) {
  lower::FeatureMap map(spec.in_channels);
  const int n = spec.map_size;
  for (int c = 0; c < spec.in_channels; ++c) {
    map[c].resize(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) map[c](i, j) = flat[c * n * n + i * n + j];
  }
  return map;
}

struct LayerTrace {
  Eigen::MatrixXd z; // linear output, before injection/abs
  Eigen::MatrixXd t; // after the mode's abs transform
  Eigen::MatrixXd a; // after activation
};

// One linear layer over a batch; chip != nullptr routes through the
// lowering schedule executor.
Eigen::MatrixXd linear_layer(const Layer& layer, const Eigen::MatrixXd& x,
                             DomainMode mode, optics::ChipState* chip) {
  const Eigen::MatrixXd weight =
      mode == DomainMode::InOn ? layer.weight.cwiseAbs() : layer.weight;
  const int batch = static_cast<int>(x.rows());

  if (layer.spec.kind == LayerKind::FullyConnected) {
    if (x.cols() != weight.rows()) {
      throw ShapeMismatch("FC input width " + std::to_string(x.cols()) +
                          " != " + std::to_string(weight.rows()));
    }
    if (!chip) {
      return (x * weight).rowwise() + layer.bias.transpose();
    }
    Eigen::MatrixXd z(batch, weight.cols());
    for (int b = 0; b < batch; ++b) {
      lower::Schedule s = lower::decompose_mvm(x.row(b).transpose(), weight,
                                               chip->active_branches);
      z.row(b) = lower::execute_schedule(s, *chip).transpose() +
                 layer.bias.transpose();
    }
    return z;
  }

  const LayerSpec& spec = layer.spec;
  const int positions = spec.map_size * spec.map_size;
  if (x.cols() != spec.in_channels * positions) {
    throw ShapeMismatch("conv input size mismatch");
  }
  Eigen::MatrixXd z(batch, spec.out_channels * positions);
  if (!chip) {
    const Eigen::MatrixXi idx = patch_indices(spec);
    for (int b = 0; b < batch; ++b) {
      const Eigen::MatrixXd p = gather_patches(x.row(b).transpose(), idx);
      const Eigen::MatrixXd out = p.transpose() * weight; // pos x C_out
      for (int c = 0; c < spec.out_channels; ++c) {
        z.block(b, c * positions, 1, positions) =
            out.col(c).transpose().array() + layer.bias[c];
      }
    }
    return z;
  }
  const lower::KernelStack ks = kernels_from_weight(spec, weight);
  for (int b = 0; b < batch; ++b) {
    lower::FeatureMap map = feature_map_from_row(x.row(b).transpose(), spec);
    lower::Schedule s = lower::lower_conv(map, ks, chip->active_branches);
    Eigen::VectorXd acc = lower::execute_schedule(s, *chip);
    for (int c = 0; c < spec.out_channels; ++c) {
      z.block(b, c * positions, 1, positions) =
          acc.segment(c * positions, positions).transpose().array() +
          layer.bias[c];
    }
  }
  return z;
}

int h_layer_index(const Network& net) {
  int found = -1;
  for (int l = 0; l < static_cast<int>(net.layers.size()); ++l) {
    if (net.layers[l].spec.kind == LayerKind::Conv2D) found = l;
  }
  return found;
}

std::vector<LayerTrace> run_forward(const Network& net,
                                    const Eigen::MatrixXd& input,
                                    DomainMode mode,
                                    const ErrorInjection& injection,
                                    optics::ChipState* chip) {
  std::mt19937_64 noise_rng(injection.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<LayerTrace> traces(net.layers.size());
  const Eigen::MatrixXd* x = &input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    LayerTrace& tr = traces[l];
    tr.z = linear_layer(layer, *x, mode, chip);
    const double sigma = is_conv_like(layer.spec.kind) ? injection.conv_std
                                                       : injection.fc_std;
    if (sigma > 0.0) {
      for (int i = 0; i < tr.z.rows(); ++i)
        for (int j = 0; j < tr.z.cols(); ++j) tr.z(i, j) += sigma * gauss(noise_rng);
    }
    tr.t = abs_linear_output(mode) ? tr.z.cwiseAbs() : tr.z;
    tr.a = apply_activation(tr.t, effective_activation(layer.spec, mode));
    x = &tr.a;
  }
  return traces;
}

} // namespace

int LayerSpec::input_dim() const {
  return kind == LayerKind::FullyConnected ? in_size
                                           : in_channels * map_size * map_size;
}

int LayerSpec::output_dim() const {
  return kind == LayerKind::FullyConnected
             ? out_size
             : out_channels * map_size * map_size;
}

Network Network::mini_automap(int input_size, int image_size, int channels,
                              std::uint64_t seed) {
  Network net;
  net.image_size = image_size;
  const int pixels = image_size * image_size;

  auto fc = [](int in, int out, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::FullyConnected;
    s.activation = act;
    s.in_size = in;
    s.out_size = out;
    return s;
  };
  auto conv = [&](LayerKind kind, int cin, int cout, int k, Activation act) {
    LayerSpec s;
    s.kind = kind;
    s.activation = act;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = k;
    s.map_size = image_size;
    return s;
  };

  std::vector<LayerSpec> specs = {
      fc(input_size, pixels / 2, Activation::Tanh),
      fc(pixels / 2, pixels, Activation::Tanh),
      conv(LayerKind::Conv2D, 1, channels, 5, Activation::ReLU),
      conv(LayerKind::Conv2D, channels, channels, 5, Activation::ReLU),
      conv(LayerKind::Deconv2D, channels, 1, 7, Activation::None),
  };

  std::mt19937_64 rng(seed ^ 0x6f63646e65747777ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const LayerSpec& spec : specs) {
    Layer layer;
    layer.spec = spec;
    int rows, cols;
    if (spec.kind == LayerKind::FullyConnected) {
      rows = spec.in_size;
      cols = spec.out_size;
    } else {
      rows = spec.kernel * spec.kernel * spec.in_channels;
      cols = spec.out_channels;
    }
    const double std = 1.0 / std::sqrt(double(rows));
    layer.weight.resize(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) layer.weight(i, j) = std * gauss(rng);
    layer.bias = Eigen::VectorXd::Zero(cols);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

ForwardResult forward(const Network& net, const Eigen::MatrixXd& input,
                      Backend backend, DomainMode mode,
                      const ErrorInjection& injection,
                      optics::ChipState* chip) {
  if (backend == Backend::ChipSim && !chip) {
    throw ShapeMismatch("ChipSim backend needs a chip");
  }
  if (input.cols() != net.input_dim()) {
    throw ShapeMismatch("input width " + std::to_string(input.cols()) +
                        " != network input " +
                        std::to_string(net.input_dim()));
  }
  std::vector<LayerTrace> traces = run_forward(
      net, input, mode, injection,
      backend == Backend::ChipSim ? chip : nullptr);
  ForwardResult result;
  result.output = traces.back().a;
  const int hl = h_layer_index(net);
  result.h = hl >= 0 ? traces[hl].a
                     : Eigen::MatrixXd::Zero(input.rows(), 0);
  result.features.reserve(traces.size());
  for (auto& tr : traces) result.features.push_back(std::move(tr.a));
  return result;
}

double loss(const Eigen::MatrixXd& output, const Eigen::MatrixXd& truth,
            const Eigen::MatrixXd& h, double lambda) {
  if (output.rows() != truth.rows() || output.cols() != truth.cols()) {
    throw ShapeMismatch("loss: output and truth differ in shape");
  }
  const double n2 = static_cast<double>(output.cols());
  const double batch = static_cast<double>(output.rows());
  double value = (output - truth).array().square().sum() / (n2 * batch);
  if (lambda != 0.0 && h.cols() > 0) {
    const double k = h.cols() / n2; // feature-map count
    value += lambda * h.array().abs().sum() / (k * n2 * batch);
  }
  return value;
}

BackwardResult backward(const Network& net, const Eigen::MatrixXd& input,
                        const Eigen::MatrixXd& truth, double lambda,
                        DomainMode mode) {
  const std::vector<LayerTrace> traces =
      run_forward(net, input, mode, {}, nullptr);
  const int layer_count = static_cast<int>(net.layers.size());
  const int hl = h_layer_index(net);
  const Eigen::MatrixXd& output = traces.back().a;
  const double n2 = static_cast<double>(output.cols());
  const double batch = static_cast<double>(input.rows());

  BackwardResult result;
  result.loss = loss(output, truth,
                     hl >= 0 ? traces[hl].a
                             : Eigen::MatrixXd::Zero(input.rows(), 0),
                     lambda);
  result.grads.weight.resize(layer_count);
  result.grads.bias.resize(layer_count);

  Eigen::MatrixXd d_a = 2.0 * (output - truth) / (n2 * batch);
  for (int l = layer_count - 1; l >= 0; --l) {
    const Layer& layer = net.layers[l];
    const LayerTrace& tr = traces[l];
    if (l == hl && lambda != 0.0) {
      const double k = tr.a.cols() / n2;
      d_a.array() +=
          lambda * tr.a.array().sign() / (k * n2 * batch);
    }
    Eigen::MatrixXd d_t =
        d_a.cwiseProduct(activation_derivative(
            tr.t, tr.a, effective_activation(layer.spec, mode)));
    Eigen::MatrixXd d_z =
        abs_linear_output(mode) ? d_t.cwiseProduct(tr.z.array().sign().matrix())
                                : std::move(d_t);

    const Eigen::MatrixXd& x = l == 0 ? input : traces[l - 1].a;
    const Eigen::MatrixXd weight_used =
        mode == DomainMode::InOn ? layer.weight.cwiseAbs() : layer.weight;

    if (layer.spec.kind == LayerKind::FullyConnected) {
      result.grads.weight[l] = x.transpose() * d_z;
      result.grads.bias[l] = d_z.colwise().sum();
      d_a = d_z * weight_used.transpose();
    } else {
      const LayerSpec& spec = layer.spec;
      const int positions = spec.map_size * spec.map_size;
      const Eigen::MatrixXi idx = patch_indices(spec);
      Eigen::MatrixXd d_w =
          Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols());
      Eigen::VectorXd d_b = Eigen::VectorXd::Zero(spec.out_channels);
      Eigen::MatrixXd d_x = Eigen::MatrixXd::Zero(x.rows(), x.cols());
      for (int b = 0; b < x.rows(); ++b) {
        Eigen::MatrixXd dzm(positions, spec.out_channels);
        for (int c = 0; c < spec.out_channels; ++c) {
          dzm.col(c) = d_z.block(b, c * positions, 1, positions).transpose();
        }
        const Eigen::MatrixXd p = gather_patches(x.row(b).transpose(), idx);
        d_w += p * dzm;
        d_b += dzm.colwise().sum();
        const Eigen::MatrixXd dp = weight_used * dzm.transpose();
        for (int col = 0; col < idx.cols(); ++col) {
          for (int row = 0; row < idx.rows(); ++row) {
            const int src = idx(row, col);
            if (src >= 0) d_x(b, src) += dp(row, col);
          }
        }
      }
      result.grads.weight[l] = d_w;
      result.grads.bias[l] = d_b;
      d_a = std::move(d_x);
    }
    if (mode == DomainMode::InOn) {
      result.grads.weight[l] = result.grads.weight[l].cwiseProduct(
          layer.weight.array().sign().matrix());
    }
  }
  return result;
}

TrainLog train(Network& net, const Eigen::MatrixXd& train_inputs,
               const Eigen::MatrixXd& train_truths,
               const Eigen::MatrixXd& val_inputs,
               const Eigen::MatrixXd& val_truths, const TrainConfig& config,
               DomainMode mode) {
  TrainLog log;
  log.config = config;

  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;
  for (const Layer& layer : net.layers) {
    m_w.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(),
                                        layer.weight.cols()));
    v_w.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(),
                                        layer.weight.cols()));
    m_b.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
    v_b.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
  }

  std::mt19937_64 rng(config.seed ^ 0x747261696e5f6fULL);
  std::vector<int> order(train_inputs.rows());
  std::iota(order.begin(), order.end(), 0);
  long t = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = epoch >= config.decay_epoch ? config.decayed_rate
                                                  : config.learning_rate;
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < static_cast<int>(order.size());
         start += config.batch_size) {
      const int count = std::min<int>(config.batch_size,
                                      order.size() - start);
      Eigen::MatrixXd bx(count, train_inputs.cols());
      Eigen::MatrixXd bt(count, train_truths.cols());
      for (int i = 0; i < count; ++i) {
        bx.row(i) = train_inputs.row(order[start + i]);
        bt.row(i) = train_truths.row(order[start + i]);
      }
      BackwardResult bw = backward(net, bx, bt, config.lambda_penalty, mode);
      if (!std::isfinite(bw.loss)) {
        throw NonFiniteLoss("non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch " +
                            std::to_string(batches));
      }
      epoch_loss += bw.loss;
      ++batches;
      ++t;
      const double corr1 = 1.0 - std::pow(config.adam_beta1, double(t));
      const double corr2 = 1.0 - std::pow(config.adam_beta2, double(t));
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        m_w[l] = config.adam_beta1 * m_w[l] +
                 (1 - config.adam_beta1) * bw.grads.weight[l];
        v_w[l] = config.adam_beta2 * v_w[l].array().matrix() +
                 (1 - config.adam_beta2) *
                     bw.grads.weight[l].array().square().matrix();
        net.layers[l].weight.array() -=
            lr * (m_w[l].array() / corr1) /
            ((v_w[l].array() / corr2).sqrt() + config.adam_epsilon);
        m_b[l] = config.adam_beta1 * m_b[l] +
                 (1 - config.adam_beta1) * bw.grads.bias[l];
        v_b[l] = config.adam_beta2 * v_b[l].array().matrix() +
                 (1 - config.adam_beta2) *
                     bw.grads.bias[l].array().square().matrix();
        net.layers[l].bias.array() -=
            lr * (m_b[l].array() / corr1) /
            ((v_b[l].array() / corr2).sqrt() + config.adam_epsilon);
      }
    }

    ForwardResult val = forward(net, val_inputs, Backend::Exact, mode);
    const double val_loss =
        loss(val.output, val_truths, val.h, config.lambda_penalty);
    if (!std::isfinite(val_loss)) {
      throw NonFiniteLoss("non-finite validation loss at epoch " +
                          std::to_string(epoch));
    }
    log.epochs.push_back(
        {epoch, epoch_loss / std::max(batches, 1), val_loss, lr});
  }
  return log;
}

Eigen::VectorXd infer_with_injection(const Network& net,
                                     const Eigen::VectorXd& input,
                                     const ErrorInjection& injection) {
  ForwardResult r = forward(net, input.transpose(), Backend::Exact,
                            DomainMode::CBD, injection);
  return r.output.row(0).transpose();
}

} // namespace ocdc::net
