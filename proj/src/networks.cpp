#include "osr/networks.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "osr/errors.hpp"

namespace osr {

namespace {

using nn::Tensor;

struct LayerSpec {
    enum Kind { Conv, TConv, DenseL, ReshapeL } kind;
    int f = 0, k = 0, s = 0, p = 0;  // conv/tconv
    int n = 0;                       // dense
    std::vector<int> dims;           // reshape
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

int parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("bad integer '" + s + "' in " + what);
    }
}

std::vector<LayerSpec> parse_descriptor(const std::string& descriptor) {
    std::vector<LayerSpec> specs;
    for (const std::string& item : split(descriptor, ',')) {
        if (item.empty()) throw std::invalid_argument("empty item in descriptor '" + descriptor + "'");
        auto f = split(item, ':');
        LayerSpec ls;
        if (f[0] == "conv" || f[0] == "tconv") {
            if (f.size() < 4 || f.size() > 5) throw std::invalid_argument("descriptor item '" + item + "' wants F:K:S[:P]");
            ls.kind = f[0] == "conv" ? LayerSpec::Conv : LayerSpec::TConv;
            ls.f = parse_int(f[1], item);
            ls.k = parse_int(f[2], item);
            ls.s = parse_int(f[3], item);
            if (f.size() == 5)
                ls.p = parse_int(f[4], item);
            else
                ls.p = ls.kind == LayerSpec::Conv ? (ls.k - 1) / 2 : std::max(0, (ls.k - ls.s) / 2);
        } else if (f[0] == "dense") {
            if (f.size() != 2) throw std::invalid_argument("descriptor item '" + item + "' wants dense:N");
            ls.kind = LayerSpec::DenseL;
            ls.n = parse_int(f[1], item);
        } else if (f[0] == "reshape") {
            if (f.size() != 2) throw std::invalid_argument("descriptor item '" + item + "' wants reshape:HxWxC");
            ls.kind = LayerSpec::ReshapeL;
            for (const std::string& d : split(f[1], 'x')) ls.dims.push_back(parse_int(d, item));
            if (ls.dims.size() != 3) throw std::invalid_argument("reshape wants three dims in '" + item + "'");
        } else {
            throw std::invalid_argument("unknown descriptor item '" + item + "'");
        }
        specs.push_back(ls);
    }
    return specs;
}

// Running activation shape while building a stack.
struct BuildShape {
    bool spatial;
    int h = 0, w = 0, c = 0;
    int flat = 0;
    int flat_count() const { return spatial ? h * w * c : flat; }
};

// Appends the descriptor's layers to `net`, LReLU after each except when
// `skip_last_act` (the caller installs its own head activation).
BuildShape build_stack(nn::Sequential& net, const std::vector<LayerSpec>& specs, BuildShape sh, Rng& rng,
                       bool skip_last_act) {
    for (std::size_t idx = 0; idx < specs.size(); ++idx) {
        const LayerSpec& ls = specs[idx];
        switch (ls.kind) {
            case LayerSpec::Conv: {
                if (!sh.spatial) throw std::invalid_argument("conv after flat activation");
                net.add(std::make_unique<nn::Conv2d>(sh.c, ls.f, ls.k, ls.s, ls.p, rng));
                sh.h = (sh.h + 2 * ls.p - ls.k) / ls.s + 1;
                sh.w = (sh.w + 2 * ls.p - ls.k) / ls.s + 1;
                sh.c = ls.f;
                if (sh.h < 1 || sh.w < 1) throw std::invalid_argument("conv shrinks input away");
                break;
            }
            case LayerSpec::TConv: {
                if (!sh.spatial) throw std::invalid_argument("tconv after flat activation");
                net.add(std::make_unique<nn::ConvTranspose2d>(sh.c, ls.f, ls.k, ls.s, ls.p, rng));
                sh.h = (sh.h - 1) * ls.s + ls.k - 2 * ls.p;
                sh.w = (sh.w - 1) * ls.s + ls.k - 2 * ls.p;
                sh.c = ls.f;
                if (sh.h < 1 || sh.w < 1) throw std::invalid_argument("tconv produces empty output");
                break;
            }
            case LayerSpec::DenseL: {
                if (sh.spatial) {
                    net.add(std::make_unique<nn::Flatten>());
                    sh = BuildShape{false, 0, 0, 0, sh.h * sh.w * sh.c};
                }
                net.add(std::make_unique<nn::Dense>(sh.flat, ls.n, rng));
                sh.flat = ls.n;
                break;
            }
            case LayerSpec::ReshapeL: {
                if (sh.spatial) throw std::invalid_argument("reshape expects a flat activation");
                if (ls.dims[0] * ls.dims[1] * ls.dims[2] != sh.flat)
                    throw std::invalid_argument("reshape size mismatch: have " + std::to_string(sh.flat));
                net.add(std::make_unique<nn::Reshape>(ls.dims));
                sh = BuildShape{true, ls.dims[0], ls.dims[1], ls.dims[2], 0};
                break;
            }
        }
        if (ls.kind != LayerSpec::ReshapeL && !(skip_last_act && idx + 1 == specs.size()))
            net.add(std::make_unique<nn::LeakyRelu>(0.2));
    }
    return sh;
}

bool looks_like_descriptor(const std::string& s) { return s.find(':') != std::string::npos; }

[[noreturn]] void unsupported_shape(const std::string& preset, const ImageShape& shape) {
    throw std::invalid_argument("preset '" + preset + "' has no architecture for input shape " + shape.str());
}

}  // namespace

std::string resolve_backbone(const std::string& name, const ImageShape& shape) {
    if (looks_like_descriptor(name)) return name;
    if (name == "plain") return "conv:16:3:2,conv:32:3:2,dense:128";
    if (name == "vgg-small") return "conv:32:3:1,conv:32:3:2,conv:64:3:1,conv:64:3:2,dense:128";
    if (name == "reduced") return "conv:8:3:2,conv:16:3:2,dense:64";
    (void)shape;
    throw std::invalid_argument("unknown backbone '" + name + "'");
}

std::string resolve_generator_arch(const std::string& name, const ImageShape& shape) {
    if (looks_like_descriptor(name)) return name;
    const bool s28 = shape == ImageShape{28, 28, 1};
    const bool s32 = shape == ImageShape{32, 32, 3};
    if (name == "paper") {
        if (s28) return "dense:6272,reshape:7x7x128,tconv:128:4:2,tconv:128:4:2,conv:1:7:1";
        if (s32) return "dense:4096,reshape:4x4x256,tconv:128:4:2,tconv:128:4:2,tconv:128:4:2,conv:3:3:1";
        unsupported_shape(name, shape);
    }
    if (name == "reduced") {
        if (s28) return "dense:1568,reshape:7x7x32,tconv:32:4:2,tconv:16:4:2,conv:1:5:1";
        if (s32) return "dense:2048,reshape:4x4x128,tconv:64:4:2,tconv:32:4:2,tconv:32:4:2,conv:3:3:1";
        unsupported_shape(name, shape);
    }
    throw std::invalid_argument("unknown generator arch '" + name + "'");
}

std::string resolve_discriminator_arch(const std::string& name, const ImageShape& shape) {
    if (looks_like_descriptor(name)) return name;
    const bool s28 = shape == ImageShape{28, 28, 1};
    const bool s32 = shape == ImageShape{32, 32, 3};
    if (name == "paper") {
        if (s28) return "conv:64:3:2,conv:64:3:2";
        if (s32) return "conv:64:3:2,conv:128:3:2,conv:128:3:2,conv:256:3:2";
        unsupported_shape(name, shape);
    }
    if (name == "reduced") {
        if (s28 || s32) return "conv:16:3:2,conv:32:3:2";
        unsupported_shape(name, shape);
    }
    throw std::invalid_argument("unknown discriminator arch '" + name + "'");
}

// ---------------------------------------------------------------------------
// ClassifierNet
// ---------------------------------------------------------------------------

ClassifierNet::ClassifierNet(const ImageShape& shape, int known, int unknown, const std::string& backbone, Rng& rng)
    : shape_(shape), known_(known), unknown_(unknown), backbone_(resolve_backbone(backbone, shape)) {
    if (known < 2) throw std::invalid_argument("ClassifierNet: needs at least 2 known classes");
    if (unknown < 0) throw std::invalid_argument("ClassifierNet: negative unknown count");
    if (shape.h < 1 || shape.w < 1 || shape.ch < 1)
        throw std::invalid_argument("ClassifierNet: unsupported input shape " + shape.str());
    BuildShape sh{true, shape.h, shape.w, shape.ch, 0};
    sh = build_stack(net_, parse_descriptor(backbone_), sh, rng, false);
    if (sh.spatial) net_.add(std::make_unique<nn::Flatten>());
    net_.add(std::make_unique<nn::Dense>(sh.flat_count(), known + unknown, rng));
}

nn::Tensor ClassifierNet::forward_logits(const nn::Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != shape_.h || batch.dim(2) != shape_.w || batch.dim(3) != shape_.ch)
        throw std::invalid_argument("ClassifierNet: batch shape " + batch.shape_str() + " does not match input " + shape_.str());
    return net_.forward(batch);
}

nn::Tensor ClassifierNet::backward(const nn::Tensor& dlogits) { return net_.backward(dlogits); }

void ClassifierNet::append_unknown_outputs(int count, double eps_scale, Rng& rng) {
    if (count < 1) throw std::invalid_argument("append_unknown_outputs: count must be >= 1");
    if (unknown_ != 0) throw std::invalid_argument("append_unknown_outputs: network already has unknown outputs");
    auto& head = dynamic_cast<nn::Dense&>(net_.layer(net_.layer_count() - 1));
    head.append_outputs(count, eps_scale, rng);
    unknown_ = count;
    unknown_frozen_ = true;
}

void ClassifierNet::reinit_unknown_outputs(double eps_scale, Rng& rng) {
    if (unknown_ < 1) throw std::invalid_argument("reinit_unknown_outputs: network has no unknown outputs");
    auto& head = dynamic_cast<nn::Dense&>(net_.layer(net_.layer_count() - 1));
    head.reinit_tail_outputs(unknown_, eps_scale, rng);
}

// ---------------------------------------------------------------------------
// GeneratorNet
// ---------------------------------------------------------------------------

GeneratorNet::GeneratorNet(const ImageShape& out_shape, int conditions, const std::string& arch, Rng& rng, int noise_dim)
    : shape_(out_shape), conditions_(conditions), noise_dim_(noise_dim), arch_(resolve_generator_arch(arch, out_shape)) {
    if (conditions < 1) throw std::invalid_argument("GeneratorNet: needs at least one condition class");
    if (noise_dim < 1) throw std::invalid_argument("GeneratorNet: bad noise dimension");
    embed_ = std::make_unique<nn::Dense>(conditions, noise_dim, rng, 1.0);
    BuildShape sh{false, 0, 0, 0, noise_dim};
    sh = build_stack(stack_, parse_descriptor(arch_), sh, rng, true);
    stack_.add(std::make_unique<nn::Sigmoid>());
    if (!sh.spatial || sh.h != out_shape.h || sh.w != out_shape.w || sh.c != out_shape.ch)
        throw std::invalid_argument("generator arch '" + arch_ + "' does not end at " + out_shape.str());
}

GeneratorNet& GeneratorNet::operator=(const GeneratorNet& o) {
    if (this == &o) return *this;
    shape_ = o.shape_;
    conditions_ = o.conditions_;
    noise_dim_ = o.noise_dim_;
    arch_ = o.arch_;
    embed_ = o.embed_ ? std::make_unique<nn::Dense>(*o.embed_) : nullptr;
    stack_ = o.stack_;
    z_ = o.z_;
    embedded_ = o.embedded_;
    return *this;
}

nn::Tensor GeneratorNet::forward(const nn::Tensor& z, const nn::Tensor& cv) {
    if (z.rank() != 2 || z.dim(1) != noise_dim_) throw std::invalid_argument("GeneratorNet: z must be [B," + std::to_string(noise_dim_) + "]");
    if (cv.rank() != 2 || cv.dim(1) != conditions_ || cv.dim(0) != z.dim(0))
        throw std::invalid_argument("GeneratorNet: cv must be [B," + std::to_string(conditions_) + "]");
    z_ = z;
    embedded_ = embed_->forward(cv);
    nn::Tensor h = z;
    for (std::int64_t i = 0; i < h.size(); ++i) h[i] *= embedded_[i];
    return stack_.forward(h);
}

void GeneratorNet::backward(const nn::Tensor& dimage) {
    nn::Tensor dh = stack_.backward(dimage);
    nn::Tensor de = dh;
    for (std::int64_t i = 0; i < de.size(); ++i) de[i] *= z_[i];
    embed_->backward(de);
}

std::vector<nn::Tensor*> GeneratorNet::params() const {
    std::vector<nn::Tensor*> out = embed_->params();
    for (nn::Tensor* t : stack_.params()) out.push_back(t);
    return out;
}

std::vector<nn::Tensor*> GeneratorNet::grads() const {
    std::vector<nn::Tensor*> out = embed_->grads();
    for (nn::Tensor* t : stack_.grads()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, nn::Tensor*>> GeneratorNet::named_params(const std::string& prefix) const {
    std::vector<std::pair<std::string, nn::Tensor*>> out;
    out.emplace_back(prefix + ".embed.W", &embed_->weight());
    out.emplace_back(prefix + ".embed.b", &embed_->bias());
    for (auto& [name, t] : stack_.named_params(prefix)) out.emplace_back(name, t);
    return out;
}

void GeneratorNet::zero_grad() {
    for (nn::Tensor* g : grads()) g->fill(0.0);
}

// ---------------------------------------------------------------------------
// DiscriminatorNet
// ---------------------------------------------------------------------------

DiscriminatorNet::DiscriminatorNet(const ImageShape& in_shape, const std::string& arch, Rng& rng)
    : shape_(in_shape), arch_(resolve_discriminator_arch(arch, in_shape)) {
    BuildShape sh{true, in_shape.h, in_shape.w, in_shape.ch, 0};
    sh = build_stack(net_, parse_descriptor(arch_), sh, rng, false);
    if (sh.spatial) net_.add(std::make_unique<nn::Flatten>());
    net_.add(std::make_unique<nn::Dense>(sh.flat_count(), 1, rng));
    net_.add(std::make_unique<nn::Sigmoid>());
}

nn::Tensor DiscriminatorNet::forward(const nn::Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != shape_.h || batch.dim(2) != shape_.w || batch.dim(3) != shape_.ch)
        throw std::invalid_argument("DiscriminatorNet: batch shape " + batch.shape_str() + " does not match input " + shape_.str());
    nn::Tensor y = net_.forward(batch);
    return y.reshaped({y.dim(0)});
}

nn::Tensor DiscriminatorNet::backward(const nn::Tensor& dscore) {
    return net_.backward(dscore.reshaped({dscore.dim(0), 1}));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'O', 'S', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError("checkpoint truncated: " + path);
    return v;
}

void write_str(std::ostream& os, const std::string& s) {
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is, const std::string& path) {
    auto n = read_raw<std::uint32_t>(is, path);
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw ParseError("checkpoint truncated: " + path);
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, nn::Tensor*>>& tensors,
                     const std::string& fingerprint, std::uint64_t step) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw NotFoundError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_raw(os, kVersion);
    write_str(os, fingerprint);
    write_raw(os, step);
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_str(os, name);
        write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
        for (int d : t->shape()) write_raw<std::int32_t>(os, d);
        os.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!os) throw ParseError("short write on checkpoint: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFoundError("checkpoint not found: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw ParseError("not a checkpoint file: " + path);
    auto version = read_raw<std::uint32_t>(is, path);
    if (version != kVersion)
        throw ParseError("checkpoint " + path + " has version " + std::to_string(version) + ", expected " + std::to_string(kVersion));
    CheckpointData data;
    data.fingerprint = read_str(is, path);
    data.step = read_raw<std::uint64_t>(is, path);
    auto count = read_raw<std::uint32_t>(is, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = read_str(is, path);
        auto rank = read_raw<std::uint32_t>(is, path);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = read_raw<std::int32_t>(is, path);
        nn::Tensor t(shape);
        if (t.size() && !is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
            throw ParseError("checkpoint truncated: " + path);
        data.tensors.emplace_back(std::move(name), std::move(t));
    }
    return data;
}

std::uint64_t load_checkpoint(const std::string& path, const std::vector<std::pair<std::string, nn::Tensor*>>& dest,
                              const std::string& expected_fingerprint) {
    CheckpointData data = read_checkpoint(path);
    if (!expected_fingerprint.empty() && data.fingerprint != expected_fingerprint)
        throw ParseError("checkpoint " + path + " was written under config fingerprint " + data.fingerprint +
                         " but the current config has " + expected_fingerprint);
    for (const auto& [name, t] : dest) {
        bool found = false;
        for (const auto& [sname, st] : data.tensors) {
            if (sname != name) continue;
            if (st.shape() != t->shape())
                throw ParseError("checkpoint tensor " + name + " has shape " + st.shape_str() + ", expected " + t->shape_str());
            *t = st;
            found = true;
            break;
        }
        if (!found) throw NotFoundError("checkpoint " + path + " is missing tensor " + name);
    }
    return data.step;
}

}  // namespace osr
