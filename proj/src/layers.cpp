#include "osr/layers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace osr::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

void fill_normal(Tensor& t, double stddev, Rng& rng) {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
}

int batch_of(const Tensor& x) { return x.rank() == 0 ? 0 : x.dim(0); }

}  // namespace

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

Dense::Dense(int in, int out, Rng& rng, double init_std)
    : in_(in),
      out_(out),
      w_({in, out}),
      b_({out}),
      gw_({in, out}),
      gb_({out}) {
    if (in < 1 || out < 1) throw std::invalid_argument("Dense: non-positive size");
    if (init_std < 0) init_std = std::sqrt(2.0 / in);
    fill_normal(w_, init_std, rng);
}

Tensor Dense::forward(const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != in_)
        throw std::invalid_argument("Dense: expected input [B," + std::to_string(in_) + "], got " + x.shape_str());
    x_ = x;
    const int B = batch_of(x);
    Tensor y({B, out_});
    for (int b = 0; b < B; ++b) {
        const double* xr = x.data() + static_cast<std::int64_t>(b) * in_;
        double* yr = y.data() + static_cast<std::int64_t>(b) * out_;
        for (int j = 0; j < out_; ++j) yr[j] = b_[j];
        for (int i = 0; i < in_; ++i) {
            const double xi = xr[i];
            const double* wr = w_.data() + static_cast<std::int64_t>(i) * out_;
            for (int j = 0; j < out_; ++j) yr[j] += xi * wr[j];
        }
    }
    return y;
}

Tensor Dense::backward(const Tensor& dy) {
    const int B = batch_of(x_);
    if (dy.rank() != 2 || dy.dim(0) != B || dy.dim(1) != out_)
        throw std::invalid_argument("Dense: gradient shape mismatch " + dy.shape_str());
    Tensor dx({B, in_});
    for (int b = 0; b < B; ++b) {
        const double* dyr = dy.data() + static_cast<std::int64_t>(b) * out_;
        const double* xr = x_.data() + static_cast<std::int64_t>(b) * in_;
        double* dxr = dx.data() + static_cast<std::int64_t>(b) * in_;
        for (int j = 0; j < out_; ++j) gb_[j] += dyr[j];
        for (int i = 0; i < in_; ++i) {
            const double* wr = w_.data() + static_cast<std::int64_t>(i) * out_;
            double* gwr = gw_.data() + static_cast<std::int64_t>(i) * out_;
            double acc = 0.0;
            const double xi = xr[i];
            for (int j = 0; j < out_; ++j) {
                acc += dyr[j] * wr[j];
                gwr[j] += xi * dyr[j];
            }
            dxr[i] = acc;
        }
    }
    return dx;
}

std::string Dense::describe() const { return "dense(" + std::to_string(in_) + "->" + std::to_string(out_) + ")"; }

void Dense::append_outputs(int extra, double init_std, Rng& rng) {
    if (extra < 1) throw std::invalid_argument("Dense: appended unit count must be >= 1");
    const int out2 = out_ + extra;
    Tensor w2({in_, out2}), b2({out2});
    for (int i = 0; i < in_; ++i) {
        for (int j = 0; j < out_; ++j) w2[static_cast<std::int64_t>(i) * out2 + j] = w_[static_cast<std::int64_t>(i) * out_ + j];
        for (int j = out_; j < out2; ++j) w2[static_cast<std::int64_t>(i) * out2 + j] = init_std * rng.normal();
    }
    for (int j = 0; j < out_; ++j) b2[j] = b_[j];
    for (int j = out_; j < out2; ++j) b2[j] = init_std * rng.normal();
    w_ = std::move(w2);
    b_ = std::move(b2);
    out_ = out2;
    gw_ = Tensor({in_, out_});
    gb_ = Tensor({out_});
}

void Dense::reinit_tail_outputs(int count, double init_std, Rng& rng) {
    if (count < 0 || count > out_) throw std::invalid_argument("Dense: bad tail count");
    for (int i = 0; i < in_; ++i)
        for (int j = out_ - count; j < out_; ++j) w_[static_cast<std::int64_t>(i) * out_ + j] = init_std * rng.normal();
    for (int j = out_ - count; j < out_; ++j) b_[j] = init_std * rng.normal();
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_ch, int filters, int kernel, int stride, int pad, Rng& rng, double init_std)
    : cin_(in_ch),
      f_(filters),
      k_(kernel),
      s_(stride),
      p_(pad),
      w_({kernel * kernel * in_ch, filters}),
      b_({filters}),
      gw_({kernel * kernel * in_ch, filters}),
      gb_({filters}) {
    if (in_ch < 1 || filters < 1 || kernel < 1 || stride < 1 || pad < 0)
        throw std::invalid_argument("Conv2d: bad geometry");
    if (init_std < 0) init_std = std::sqrt(2.0 / (kernel * kernel * in_ch));
    fill_normal(w_, init_std, rng);
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.rank() != 4 || x.dim(3) != cin_)
        throw std::invalid_argument("Conv2d: expected [B,H,W," + std::to_string(cin_) + "], got " + x.shape_str());
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int OH = (H + 2 * p_ - k_) / s_ + 1;
    const int OW = (W + 2 * p_ - k_) / s_ + 1;
    if (OH < 1 || OW < 1) throw std::invalid_argument("Conv2d: kernel larger than padded input");
    x_shape_ = x.shape();

    const int patch = k_ * k_ * cin_;
    cols_ = Tensor({B * OH * OW, patch});
    for (int b = 0; b < B; ++b) {
        const double* xb = x.data() + static_cast<std::int64_t>(b) * H * W * cin_;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                double* row = cols_.data() + (static_cast<std::int64_t>(b) * OH * OW + static_cast<std::int64_t>(oy) * OW + ox) * patch;
                for (int u = 0; u < k_; ++u) {
                    const int iy = oy * s_ - p_ + u;
                    for (int v = 0; v < k_; ++v) {
                        const int ix = ox * s_ - p_ + v;
                        double* dst = row + (u * k_ + v) * cin_;
                        if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                            for (int c = 0; c < cin_; ++c) dst[c] = 0.0;
                        } else {
                            const double* src = xb + (static_cast<std::int64_t>(iy) * W + ix) * cin_;
                            for (int c = 0; c < cin_; ++c) dst[c] = src[c];
                        }
                    }
                }
            }
    }

    Tensor y({B, OH, OW, f_});
    if (B > 0) {
        CMatMap cm(cols_.data(), B * OH * OW, patch);
        CMatMap wm(w_.data(), patch, f_);
        MatMap ym(y.data(), B * OH * OW, f_);
        ym.noalias() = cm * wm;
        ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b_.data(), f_);
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const int B = x_shape_[0], H = x_shape_[1], W = x_shape_[2];
    const int OH = dy.dim(1), OW = dy.dim(2);
    const int patch = k_ * k_ * cin_;
    const std::int64_t rows = static_cast<std::int64_t>(B) * OH * OW;

    Tensor dx({B, H, W, cin_});
    if (B == 0) return dx;

    CMatMap dym(dy.data(), rows, f_);
    {
        CMatMap cm(cols_.data(), rows, patch);
        MatMap gwm(gw_.data(), patch, f_);
        gwm.noalias() += cm.transpose() * dym;
        Eigen::Map<Eigen::RowVectorXd>(gb_.data(), f_) += dym.colwise().sum();
    }

    Tensor dcols({static_cast<int>(rows), patch});
    {
        CMatMap wm(w_.data(), patch, f_);
        MatMap dcm(dcols.data(), rows, patch);
        dcm.noalias() = dym * wm.transpose();
    }

    for (int b = 0; b < B; ++b) {
        double* dxb = dx.data() + static_cast<std::int64_t>(b) * H * W * cin_;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                const double* row = dcols.data() + (static_cast<std::int64_t>(b) * OH * OW + static_cast<std::int64_t>(oy) * OW + ox) * patch;
                for (int u = 0; u < k_; ++u) {
                    const int iy = oy * s_ - p_ + u;
                    if (iy < 0 || iy >= H) continue;
                    for (int v = 0; v < k_; ++v) {
                        const int ix = ox * s_ - p_ + v;
                        if (ix < 0 || ix >= W) continue;
                        const double* src = row + (u * k_ + v) * cin_;
                        double* dst = dxb + (static_cast<std::int64_t>(iy) * W + ix) * cin_;
                        for (int c = 0; c < cin_; ++c) dst[c] += src[c];
                    }
                }
            }
    }
    return dx;
}

std::string Conv2d::describe() const {
    return "conv(" + std::to_string(f_) + "," + std::to_string(k_) + "," + std::to_string(s_) + ",p" + std::to_string(p_) + ")";
}

// ---------------------------------------------------------------------------
// ConvTranspose2d
// ---------------------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(int in_ch, int filters, int kernel, int stride, int pad, Rng& rng, double init_std)
    : cin_(in_ch),
      f_(filters),
      k_(kernel),
      s_(stride),
      p_(pad),
      w_({in_ch, kernel * kernel * filters}),
      b_({filters}),
      gw_({in_ch, kernel * kernel * filters}),
      gb_({filters}) {
    if (in_ch < 1 || filters < 1 || kernel < 1 || stride < 1 || pad < 0)
        throw std::invalid_argument("ConvTranspose2d: bad geometry");
    if (init_std < 0) init_std = std::sqrt(2.0 / (kernel * kernel * in_ch));
    fill_normal(w_, init_std, rng);
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
    if (x.rank() != 4 || x.dim(3) != cin_)
        throw std::invalid_argument("ConvTranspose2d: expected [B,H,W," + std::to_string(cin_) + "], got " + x.shape_str());
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int OH = (H - 1) * s_ + k_ - 2 * p_;
    const int OW = (W - 1) * s_ + k_ - 2 * p_;
    if (OH < 1 || OW < 1) throw std::invalid_argument("ConvTranspose2d: empty output");
    x_ = x;
    y_shape_ = {B, OH, OW, f_};

    const int patch = k_ * k_ * f_;
    const std::int64_t rows = static_cast<std::int64_t>(B) * H * W;
    Tensor cols({static_cast<int>(rows), patch});
    if (B > 0) {
        CMatMap xm(x.data(), rows, cin_);
        CMatMap wm(w_.data(), cin_, patch);
        MatMap cm(cols.data(), rows, patch);
        cm.noalias() = xm * wm;
    }

    Tensor y({B, OH, OW, f_});
    for (int b = 0; b < B; ++b) {
        double* yb = y.data() + static_cast<std::int64_t>(b) * OH * OW * f_;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const double* row = cols.data() + (static_cast<std::int64_t>(b) * H * W + static_cast<std::int64_t>(i) * W + j) * patch;
                for (int u = 0; u < k_; ++u) {
                    const int oy = i * s_ - p_ + u;
                    if (oy < 0 || oy >= OH) continue;
                    for (int v = 0; v < k_; ++v) {
                        const int ox = j * s_ - p_ + v;
                        if (ox < 0 || ox >= OW) continue;
                        const double* src = row + (u * k_ + v) * f_;
                        double* dst = yb + (static_cast<std::int64_t>(oy) * OW + ox) * f_;
                        for (int c = 0; c < f_; ++c) dst[c] += src[c];
                    }
                }
            }
    }
    for (std::int64_t i = 0; i < y.size(); ++i) y[i] += b_[i % f_];
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
    const int B = x_.rank() == 4 ? x_.dim(0) : 0;
    const int H = x_.dim(1), W = x_.dim(2);
    const int OH = y_shape_[1], OW = y_shape_[2];
    if (dy.shape() != y_shape_) throw std::invalid_argument("ConvTranspose2d: gradient shape mismatch " + dy.shape_str());

    Tensor dx({B, H, W, cin_});
    if (B == 0) return dx;

    for (std::int64_t i = 0; i < dy.size(); ++i) gb_[i % f_] += dy[i];

    const int patch = k_ * k_ * f_;
    const std::int64_t rows = static_cast<std::int64_t>(B) * H * W;
    Tensor dcols({static_cast<int>(rows), patch});
    for (int b = 0; b < B; ++b) {
        const double* dyb = dy.data() + static_cast<std::int64_t>(b) * OH * OW * f_;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                double* row = dcols.data() + (static_cast<std::int64_t>(b) * H * W + static_cast<std::int64_t>(i) * W + j) * patch;
                for (int u = 0; u < k_; ++u) {
                    const int oy = i * s_ - p_ + u;
                    for (int v = 0; v < k_; ++v) {
                        const int ox = j * s_ - p_ + v;
                        double* dst = row + (u * k_ + v) * f_;
                        if (oy < 0 || oy >= OH || ox < 0 || ox >= OW) {
                            for (int c = 0; c < f_; ++c) dst[c] = 0.0;
                        } else {
                            const double* src = dyb + (static_cast<std::int64_t>(oy) * OW + ox) * f_;
                            for (int c = 0; c < f_; ++c) dst[c] = src[c];
                        }
                    }
                }
            }
    }

    {
        CMatMap xm(x_.data(), rows, cin_);
        CMatMap dcm(dcols.data(), rows, patch);
        MatMap gwm(gw_.data(), cin_, patch);
        gwm.noalias() += xm.transpose() * dcm;
        CMatMap wm(w_.data(), cin_, patch);
        MatMap dxm(dx.data(), rows, cin_);
        dxm.noalias() = dcm * wm.transpose();
    }
    return dx;
}

std::string ConvTranspose2d::describe() const {
    return "tconv(" + std::to_string(f_) + "," + std::to_string(k_) + "," + std::to_string(s_) + ",p" + std::to_string(p_) + ")";
}

// ---------------------------------------------------------------------------
// Activations and shape adapters
// ---------------------------------------------------------------------------

Tensor LeakyRelu::forward(const Tensor& x) {
    x_ = x;
    Tensor y = x;
    for (std::int64_t i = 0; i < y.size(); ++i)
        if (y[i] < 0) y[i] *= slope_;
    return y;
}

Tensor LeakyRelu::backward(const Tensor& dy) {
    Tensor dx = dy;
    for (std::int64_t i = 0; i < dx.size(); ++i)
        if (x_[i] < 0) dx[i] *= slope_;
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
    Tensor y = x;
    for (std::int64_t i = 0; i < y.size(); ++i) {
        const double v = y[i];
        y[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    y_ = y;
    return y;
}

Tensor Sigmoid::backward(const Tensor& dy) {
    Tensor dx = dy;
    for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] *= y_[i] * (1.0 - y_[i]);
    return dx;
}

Tensor Flatten::forward(const Tensor& x) {
    x_shape_ = x.shape();
    const int B = x.rank() > 0 ? x.dim(0) : 0;
    const int rest = B > 0 ? static_cast<int>(x.size() / B) : static_cast<int>(Tensor::count(std::vector<int>(x_shape_.begin() + 1, x_shape_.end())));
    return x.reshaped({B, rest});
}

Tensor Flatten::backward(const Tensor& dy) { return dy.reshaped(x_shape_); }

Tensor Reshape::forward(const Tensor& x) {
    x_shape_ = x.shape();
    std::vector<int> s{x.dim(0)};
    s.insert(s.end(), dims_.begin(), dims_.end());
    return x.reshaped(s);
}

Tensor Reshape::backward(const Tensor& dy) { return dy.reshaped(x_shape_); }

std::string Reshape::describe() const {
    std::string s = "reshape(";
    for (std::size_t i = 0; i < dims_.size(); ++i) s += (i ? "x" : "") + std::to_string(dims_[i]);
    return s + ")";
}

// ---------------------------------------------------------------------------
// Sequential
// ---------------------------------------------------------------------------

Tensor Sequential::forward(const Tensor& x) {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
}

Tensor Sequential::backward(const Tensor& dy) {
    Tensor g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

std::vector<Tensor*> Sequential::params() const {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
        for (Tensor* t : l->params()) out.push_back(t);
    return out;
}

std::vector<Tensor*> Sequential::grads() const {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
        for (Tensor* t : l->grads()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Sequential::named_params(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto ps = layers_[i]->params();
        static const char* slot[] = {"W", "b"};
        for (std::size_t j = 0; j < ps.size(); ++j)
            out.emplace_back(prefix + "." + std::to_string(i) + "." + (j < 2 ? slot[j] : std::to_string(j)), ps[j]);
    }
    return out;
}

void Sequential::zero_grad() {
    for (Tensor* g : grads()) g->fill(0.0);
}

std::int64_t Sequential::param_count() const {
    std::int64_t n = 0;
    for (Tensor* t : params()) n += t->size();
    return n;
}

std::string Sequential::describe() const {
    std::string s;
    for (std::size_t i = 0; i < layers_.size(); ++i) s += (i ? "," : "") + layers_[i]->describe();
    return s;
}

}  // namespace osr::nn
