#pragma once

// Scalar-generic building blocks of the toy codec: a one-hidden-layer tanh
// MLP with manual backprop, the L1 objectives, and the log-mel objective
// with its analytic gradient. Training instantiates these with float; the
// gradient checks instantiate them with double.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "throatline/dsp.hpp"

namespace throatline::codec_math {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// affine(in -> hidden) -> tanh -> affine(hidden -> out)
template <typename S>
struct MlpT {
  Mat<S> w1;  // hidden x in
  Vec<S> b1;
  Mat<S> w2;  // out x hidden
  Vec<S> b2;

  std::size_t in_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(w2.rows()); }

  static MlpT zeros(std::size_t in, std::size_t hidden, std::size_t out) {
    MlpT m;
    m.w1 = Mat<S>::Zero(hidden, in);
    m.b1 = Vec<S>::Zero(hidden);
    m.w2 = Mat<S>::Zero(out, hidden);
    m.b2 = Vec<S>::Zero(out);
    return m;
  }

  template <typename T>
  MlpT<T> cast() const {
    return {w1.template cast<T>(), b1.template cast<T>(),
            w2.template cast<T>(), b2.template cast<T>()};
  }

  // Visits the four tensors in declaration order.
  template <typename F>
  void for_each_tensor(F&& f) {
    f(w1.data(), static_cast<std::size_t>(w1.size()));
    f(b1.data(), static_cast<std::size_t>(b1.size()));
    f(w2.data(), static_cast<std::size_t>(w2.size()));
    f(b2.data(), static_cast<std::size_t>(b2.size()));
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    f(w1.data(), static_cast<std::size_t>(w1.size()));
    f(b1.data(), static_cast<std::size_t>(b1.size()));
    f(w2.data(), static_cast<std::size_t>(w2.size()));
    f(b2.data(), static_cast<std::size_t>(b2.size()));
  }

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() +
                                    b2.size());
  }
};

// Activations kept for the backward pass. Columns are batch items.
template <typename S>
struct MlpTape {
  Mat<S> input;
  Mat<S> hidden;  // tanh output
};

template <typename S>
Mat<S> mlp_forward(const MlpT<S>& m, const Mat<S>& x, MlpTape<S>* tape) {
  Mat<S> h = ((m.w1 * x).colwise() + m.b1).array().tanh().matrix();
  Mat<S> y = (m.w2 * h).colwise() + m.b2;
  if (tape != nullptr) {
    tape->input = x;
    tape->hidden = std::move(h);
  }
  return y;
}

// Accumulates parameter gradients into `grad` (same shapes as the model) and
// returns d(loss)/d(input).
template <typename S>
Mat<S> mlp_backward(const MlpT<S>& m, const MlpTape<S>& tape, const Mat<S>& dy,
                    MlpT<S>& grad) {
  grad.w2.noalias() += dy * tape.hidden.transpose();
  grad.b2 += dy.rowwise().sum();
  Mat<S> dh = m.w2.transpose() * dy;
  dh.array() *= (S(1) - tape.hidden.array().square());
  grad.w1.noalias() += dh * tape.input.transpose();
  grad.b1 += dh.rowwise().sum();
  return m.w1.transpose() * dh;
}

// mean |a - b| over all elements; writes d/da into `da` when non-null.
template <typename S>
S l1_loss(const Mat<S>& a, const Mat<S>& b, Mat<S>* da) {
  const Mat<S> diff = a - b;
  const S n = static_cast<S>(diff.size());
  if (da != nullptr) {
    *da = diff.unaryExpr([n](S v) {
      return v > S(0) ? S(1) / n : (v < S(0) ? S(-1) / n : S(0));
    });
  }
  return diff.array().abs().sum() / n;
}

// Mean-square error between log10(mel + floor) spectra of two batches of
// frames. STFT with a Hann window of `win` samples, hop `win/2`, FFT size
// `win`, no padding.
template <typename S>
class LogMelLoss {
 public:
  LogMelLoss(std::size_t frame_len, std::size_t win, std::size_t n_mels,
             double rate, double floor)
      : frame_len_(frame_len), win_(win), hop_(win / 2), floor_(S(floor)) {
    n_cols_ = frame_len >= win ? (frame_len - win) / hop_ + 1 : 0;
    n_bins_ = win / 2 + 1;
    window_.resize(win);
    for (std::size_t n = 0; n < win; ++n) {
      window_[n] = S(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi *
                                          static_cast<double>(n) /
                                          static_cast<double>(win)));
    }
    const dsp::Filterbank fb = dsp::mel_filterbank(n_mels, win, rate);
    mel_ = Mat<S>::Zero(static_cast<Eigen::Index>(n_mels),
                        static_cast<Eigen::Index>(n_bins_));
    for (std::size_t m = 0; m < n_mels; ++m) {
      for (std::size_t k = 0; k < n_bins_; ++k) {
        mel_(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) =
            S(fb.weights[m][k]);
      }
    }
  }

  std::size_t columns_per_frame() const { return n_cols_; }

  // Log-mel features of every frame: (n_mels x n_cols) blocks stacked
  // column-wise, frame-major.
  Mat<S> features(const Mat<S>& frames) const {
    Mat<S> out(mel_.rows(), static_cast<Eigen::Index>(n_cols_) * frames.cols());
    std::vector<std::complex<S>> spec;
    Vec<S> power(static_cast<Eigen::Index>(n_bins_));
    for (Eigen::Index f = 0; f < frames.cols(); ++f) {
      for (std::size_t c = 0; c < n_cols_; ++c) {
        spectrum(frames.col(f), c, spec);
        for (std::size_t k = 0; k < n_bins_; ++k) {
          power(static_cast<Eigen::Index>(k)) = std::norm(spec[k]);
        }
        out.col(f * static_cast<Eigen::Index>(n_cols_) +
                static_cast<Eigen::Index>(c)) =
            ((mel_ * power).array() + floor_).log() / S(std::log(10.0));
      }
    }
    return out;
  }

  // Loss of `y` against precomputed target features; writes dL/dy.
  S loss(const Mat<S>& y, const Mat<S>& target_features, Mat<S>* dy) const {
    const Eigen::Index n_mels = mel_.rows();
    const S count = static_cast<S>(n_mels) * static_cast<S>(n_cols_) *
                    static_cast<S>(y.cols());
    S total = 0;
    if (dy != nullptr) *dy = Mat<S>::Zero(y.rows(), y.cols());
    std::vector<std::complex<S>> spec;
    std::vector<std::complex<S>> coeff(win_);
    std::vector<std::complex<S>> back;
    Vec<S> power(static_cast<Eigen::Index>(n_bins_));
    for (Eigen::Index f = 0; f < y.cols(); ++f) {
      for (std::size_t c = 0; c < n_cols_; ++c) {
        spectrum(y.col(f), c, spec);
        for (std::size_t k = 0; k < n_bins_; ++k) {
          power(static_cast<Eigen::Index>(k)) = std::norm(spec[k]);
        }
        const Vec<S> mel = mel_ * power;
        const Vec<S> logmel = (mel.array() + floor_).log() / S(std::log(10.0));
        const Vec<S> diff =
            logmel - target_features.col(f * static_cast<Eigen::Index>(n_cols_) +
                                         static_cast<Eigen::Index>(c));
        total += diff.squaredNorm();
        if (dy == nullptr) continue;
        // d/dmel of log10(mel + floor), chained through the filterbank.
        const Vec<S> dmel = (S(2) / count) * diff.array() /
                            ((mel.array() + floor_) * S(std::log(10.0)));
        const Vec<S> dpower = mel_.transpose() * dmel;
        // power_k = |X_k|^2 with X_k = sum_n s_n e^{-j 2 pi k n / N}:
        // dL/ds_n = 2 Re(sum_k dpower_k conj(X_k) e^{-j 2 pi k n / N}).
        std::fill(coeff.begin(), coeff.end(), std::complex<S>(0));
        for (std::size_t k = 0; k < n_bins_; ++k) {
          coeff[k] = dpower(static_cast<Eigen::Index>(k)) * std::conj(spec[k]);
        }
        fft_.fwd(back, coeff);
        const std::size_t start = c * hop_;
        for (std::size_t n = 0; n < win_; ++n) {
          (*dy)(static_cast<Eigen::Index>(start + n), f) +=
              S(2) * back[n].real() * window_[n];
        }
      }
    }
    return total / count;
  }

 private:
  template <typename Col>
  void spectrum(const Col& frame, std::size_t c,
                std::vector<std::complex<S>>& out) const {
    std::vector<std::complex<S>> seg(win_);
    const std::size_t start = c * hop_;
    for (std::size_t n = 0; n < win_; ++n) {
      seg[n] = std::complex<S>(frame(static_cast<Eigen::Index>(start + n)) *
                                   window_[n],
                               S(0));
    }
    fft_.fwd(out, seg);
  }

  std::size_t frame_len_;
  std::size_t win_;
  std::size_t hop_;
  std::size_t n_cols_ = 0;
  std::size_t n_bins_ = 0;
  S floor_;
  std::vector<S> window_;
  Mat<S> mel_;
  mutable Eigen::FFT<S> fft_;
};

}  // namespace throatline::codec_math
