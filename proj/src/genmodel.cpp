#include "phrec/genmodel.hpp"

#include "phrec/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace phrec {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void VaeArchitecture::validate() const {
    if (kind != "dense")
        throw ValidationError("unsupported architecture kind '" + kind +
                              "': this build constructs dense layer stacks only");
    for (int d : input_dims)
        if (d <= 0) throw ValidationError("architecture input dims must be positive");
    if (latent_dim <= 0) throw ValidationError("latent_dim must be positive");
    for (int h : encoder_hidden)
        if (h <= 0) throw ValidationError("hidden sizes must be positive");
    for (int h : decoder_hidden)
        if (h <= 0) throw ValidationError("hidden sizes must be positive");
}

namespace {

std::vector<int> encoder_sizes(const VaeArchitecture& a) {
    std::vector<int> s;
    s.push_back(static_cast<int>(a.input_size()));
    s.insert(s.end(), a.encoder_hidden.begin(), a.encoder_hidden.end());
    s.push_back(2 * a.latent_dim);
    return s;
}

std::vector<int> decoder_sizes(const VaeArchitecture& a) {
    std::vector<int> s;
    s.push_back(a.latent_dim);
    s.insert(s.end(), a.decoder_hidden.begin(), a.decoder_hidden.end());
    s.push_back(static_cast<int>(a.input_size()));
    return s;
}

void check_layer_chain(const std::vector<DenseLayer>& layers, const std::vector<int>& sizes,
                       const char* which) {
    if (layers.size() + 1 != sizes.size())
        throw ValidationError(std::string(which) + ": layer count does not match architecture");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].W.rows() != sizes[l + 1] || layers[l].W.cols() != sizes[l] ||
            layers[l].b.size() != sizes[l + 1])
            throw ValidationError(std::string(which) + ": layer " + std::to_string(l) +
                                  " shape breaks the chain");
        if (!layers[l].W.allFinite() || !layers[l].b.allFinite())
            throw ValidationError(std::string(which) + ": non-finite weights in layer " +
                                  std::to_string(l));
    }
}

VectorXd flatten(const Volume& x, const VaeArchitecture& arch) {
    if (x.dims != arch.input_dims)
        throw ValidationError("volume dims do not match the architecture input");
    return Eigen::Map<const VectorXd>(x.data.data(), static_cast<Eigen::Index>(x.data.size()));
}

MatrixXd affine(const DenseLayer& layer, const MatrixXd& a) {
    MatrixXd h(layer.W.rows(), a.cols());
    h.noalias() = layer.W * a;
    h.colwise() += layer.b;
    return h;
}

// Forward through the encoder stack; returns hidden activations when keep_acts.
MatrixXd encoder_forward(const VaeParams& p, const MatrixXd& x,
                         std::vector<MatrixXd>* acts) {
    MatrixXd a = x;
    if (acts) acts->push_back(a);
    for (std::size_t l = 0; l + 1 < p.encoder.size(); ++l) {
        a = affine(p.encoder[l], a).array().tanh();
        if (acts) acts->push_back(a);
    }
    return affine(p.encoder.back(), a);
}

MatrixXd decoder_forward(const VaeParams& p, const MatrixXd& z,
                         std::vector<MatrixXd>* acts) {
    MatrixXd a = z;
    if (acts) acts->push_back(a);
    for (std::size_t l = 0; l + 1 < p.decoder.size(); ++l) {
        a = affine(p.decoder[l], a).array().tanh();
        if (acts) acts->push_back(a);
    }
    const MatrixXd pre = affine(p.decoder.back(), a);
    return (1.0 / (1.0 + (-pre.array()).exp())).matrix();
}

VaeGradients zero_gradients(const VaeParams& p) {
    VaeGradients g;
    for (const auto& l : p.encoder)
        g.encoder.push_back({MatrixXd::Zero(l.W.rows(), l.W.cols()), VectorXd::Zero(l.b.size())});
    for (const auto& l : p.decoder)
        g.decoder.push_back({MatrixXd::Zero(l.W.rows(), l.W.cols()), VectorXd::Zero(l.b.size())});
    return g;
}

struct BatchResult {
    double loss, mse_term, kl_term;
    VaeGradients grads;
};

// Forward + backward for a batch (columns are samples); gradients of the
// batch-mean loss are written into preallocated buffers.
void elbo_batch_into(const VaeParams& p, const MatrixXd& X, const MatrixXd& Eps,
                     double kl_weight, BatchResult& out) {
    const auto n = static_cast<double>(X.rows());
    const auto B = static_cast<double>(X.cols());
    const int d = p.arch.latent_dim;

    std::vector<MatrixXd> enc_acts, dec_acts;
    const MatrixXd Xc = X.colwise() - p.input_offset;
    const MatrixXd enc_out = encoder_forward(p, Xc, &enc_acts);
    const MatrixXd Mu = enc_out.topRows(d);
    const MatrixXd Lv = enc_out.bottomRows(d);
    const MatrixXd Sigma = (0.5 * Lv.array()).exp().matrix();
    const MatrixXd Z = Mu + Sigma.cwiseProduct(Eps);
    const MatrixXd Y = decoder_forward(p, Z, &dec_acts);

    const MatrixXd diff = Y - X;
    const double mse_term = diff.array().square().sum() / (n * B);
    const double kl_term =
        0.5 * (Lv.array().exp() + Mu.array().square() - Lv.array() - 1.0).sum() / B;

    out.mse_term = mse_term;
    out.kl_term = kl_term;
    out.loss = mse_term + kl_weight * kl_term;
    if (!std::isfinite(out.loss))
        throw std::runtime_error("elbo_loss: numerical overflow (loss not finite)");

    // decoder backward, starting at the sigmoid output
    MatrixXd dH = (2.0 / (n * B)) * diff.cwiseProduct(Y.cwiseProduct((1.0 - Y.array()).matrix()));
    MatrixXd dA;
    for (int l = static_cast<int>(p.decoder.size()) - 1; l >= 0; --l) {
        out.grads.decoder[l].W.noalias() = dH * dec_acts[l].transpose();
        out.grads.decoder[l].b = dH.rowwise().sum();
        dA.resize(p.decoder[l].W.cols(), dH.cols());
        dA.noalias() = p.decoder[l].W.transpose() * dH;
        if (l > 0)
            dH = dA.cwiseProduct((1.0 - dec_acts[l].array().square()).matrix());
        else
            dH = dA; // gradient wrt z
    }

    const MatrixXd dZ = dH;
    MatrixXd dEnc(2 * d, X.cols());
    dEnc.topRows(d) = dZ + (kl_weight / B) * Mu;
    dEnc.bottomRows(d) = 0.5 * dZ.cwiseProduct(Eps).cwiseProduct(Sigma) +
                         (kl_weight / B) * 0.5 * (Lv.array().exp() - 1.0).matrix();

    MatrixXd dHe = dEnc;
    for (int l = static_cast<int>(p.encoder.size()) - 1; l >= 0; --l) {
        out.grads.encoder[l].W.noalias() = dHe * enc_acts[l].transpose();
        out.grads.encoder[l].b = dHe.rowwise().sum();
        if (l > 0) {
            dA.resize(p.encoder[l].W.cols(), dHe.cols());
            dA.noalias() = p.encoder[l].W.transpose() * dHe;
            dHe = dA.cwiseProduct((1.0 - enc_acts[l].array().square()).matrix());
        }
    }
}

BatchResult elbo_batch(const VaeParams& p, const MatrixXd& X, const MatrixXd& Eps,
                       double kl_weight) {
    BatchResult out;
    out.grads = zero_gradients(p);
    elbo_batch_into(p, X, Eps, kl_weight, out);
    return out;
}

} // namespace

void VaeParams::validate() const {
    arch.validate();
    if (input_offset.size() != static_cast<Eigen::Index>(arch.input_size()))
        throw ValidationError("input_offset length does not match the architecture input");
    if (!input_offset.allFinite()) throw ValidationError("non-finite input offset");
    check_layer_chain(encoder, encoder_sizes(arch), "encoder");
    check_layer_chain(decoder, decoder_sizes(arch), "decoder");
}

VaeParams init_vae_params(const VaeArchitecture& arch, std::uint64_t seed) {
    arch.validate();
    Rng rng(mix_seed(seed, 0x696e6974)); // "init"
    auto make_stack = [&](const std::vector<int>& sizes) {
        std::vector<DenseLayer> layers;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            DenseLayer layer;
            const double scale = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
            layer.W = MatrixXd::NullaryExpr(sizes[l + 1], sizes[l],
                                            [&]() { return scale * rng.normal(); });
            layer.b = VectorXd::Zero(sizes[l + 1]);
            layers.push_back(std::move(layer));
        }
        return layers;
    };
    VaeParams p;
    p.arch = arch;
    p.input_offset = VectorXd::Zero(static_cast<Eigen::Index>(arch.input_size()));
    p.encoder = make_stack(encoder_sizes(arch));
    p.decoder = make_stack(decoder_sizes(arch));
    // start with a tight posterior (sigma ~ e^-3) so early epochs are not
    // dominated by reparameterization noise
    p.encoder.back().b.tail(arch.latent_dim).setConstant(-6.0);
    return p;
}

LatentStats encode(const VaeParams& p, const Volume& x) {
    p.validate();
    const VectorXd v = flatten(x, p.arch) - p.input_offset;
    const MatrixXd out = encoder_forward(p, v, nullptr);
    const int d = p.arch.latent_dim;
    LatentStats s;
    s.mu = out.topRows(d).col(0);
    s.sigma = (0.5 * out.bottomRows(d).col(0).array()).exp();
    return s;
}

Eigen::VectorXd reparameterize(const LatentStats& stats, Rng& rng) {
    if (stats.mu.size() != stats.sigma.size())
        throw ValidationError("reparameterize: mu/sigma length mismatch");
    if ((stats.sigma.array() <= 0.0).any())
        throw ValidationError("reparameterize: sigma must be strictly positive");
    VectorXd z(stats.mu.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
        z[i] = stats.mu[i] + stats.sigma[i] * rng.normal();
    return z;
}

Volume decode(const VaeParams& p, const VectorXd& z) {
    p.validate();
    if (z.size() != p.arch.latent_dim)
        throw ValidationError("decode: latent vector length mismatch");
    const MatrixXd y = decoder_forward(p, z, nullptr);
    Volume v(p.arch.input_dims, p.arch.input_spacing);
    Eigen::Map<VectorXd>(v.data.data(), y.rows()) = y.col(0);
    return v;
}

double kl_divergence(const LatentStats& stats) {
    if ((stats.sigma.array() <= 0.0).any())
        throw ValidationError("kl_divergence: sigma must be strictly positive");
    const auto s2 = stats.sigma.array().square();
    return 0.5 * (s2 + stats.mu.array().square() - s2.log() - 1.0).sum();
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (batch_size <= 0) throw ValidationError("batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw ValidationError("learning_rate must be >= 0");
    if (optimizer != "adam" && optimizer != "sgd")
        throw ValidationError("optimizer must be adam or sgd");
    if (!(kl_weight >= 0.0)) throw ValidationError("kl_weight must be >= 0");
}

ElboResult elbo_loss(const VaeParams& p, const Volume& x, std::uint64_t noise_seed,
                     const TrainConfig& cfg) {
    p.validate();
    cfg.validate();
    const VectorXd v = flatten(x, p.arch);
    Rng rng(noise_seed);
    MatrixXd eps(p.arch.latent_dim, 1);
    for (int i = 0; i < p.arch.latent_dim; ++i) eps(i, 0) = rng.normal();
    BatchResult b = elbo_batch(p, v, eps, cfg.kl_weight);
    ElboResult r;
    r.loss = b.loss;
    r.mse_term = b.mse_term;
    r.kl_term = b.kl_term;
    r.grads = std::move(b.grads);
    return r;
}

namespace {

struct AdamState {
    VaeGradients m, v;
    long t = 0;
};

void apply_update(VaeParams& p, const VaeGradients& g, const TrainConfig& cfg, AdamState& st) {
    if (cfg.optimizer == "sgd") {
        for (std::size_t l = 0; l < p.encoder.size(); ++l) {
            p.encoder[l].W -= cfg.learning_rate * g.encoder[l].W;
            p.encoder[l].b -= cfg.learning_rate * g.encoder[l].b;
        }
        for (std::size_t l = 0; l < p.decoder.size(); ++l) {
            p.decoder[l].W -= cfg.learning_rate * g.decoder[l].W;
            p.decoder[l].b -= cfg.learning_rate * g.decoder[l].b;
        }
        return;
    }
    ++st.t;
    const double b1 = cfg.adam.beta1, b2 = cfg.adam.beta2, eps = cfg.adam.eps;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
    auto step = [&](MatrixXd& param, MatrixXd& m, MatrixXd& v, const MatrixXd& grad) {
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
        param.array() -=
            cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    auto step_v = [&](VectorXd& param, VectorXd& m, VectorXd& v, const VectorXd& grad) {
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
        param.array() -=
            cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
        step(p.encoder[l].W, st.m.encoder[l].W, st.v.encoder[l].W, g.encoder[l].W);
        step_v(p.encoder[l].b, st.m.encoder[l].b, st.v.encoder[l].b, g.encoder[l].b);
    }
    for (std::size_t l = 0; l < p.decoder.size(); ++l) {
        step(p.decoder[l].W, st.m.decoder[l].W, st.v.decoder[l].W, g.decoder[l].W);
        step_v(p.decoder[l].b, st.m.decoder[l].b, st.v.decoder[l].b, g.decoder[l].b);
    }
}

constexpr std::uint64_t kInitTag = 0x696e6974;     // "init"
constexpr std::uint64_t kShuffleTag = 0x73686664;  // "shfd"
constexpr std::uint64_t kNoiseTag = 0x6e6f6973;    // "nois"

} // namespace

VaeParams train_vae(const std::vector<Volume>& train_images,
                    const std::vector<Volume>& val_images, const VaeArchitecture& arch,
                    const TrainConfig& cfg, std::vector<TrainTraceRow>* trace) {
    arch.validate();
    cfg.validate();
    if (train_images.empty()) throw ValidationError("train_vae: empty training set");

    const auto n = static_cast<Eigen::Index>(arch.input_size());
    MatrixXd all(n, static_cast<Eigen::Index>(train_images.size()));
    for (std::size_t i = 0; i < train_images.size(); ++i)
        all.col(static_cast<Eigen::Index>(i)) = flatten(train_images[i], arch);
    MatrixXd val(n, static_cast<Eigen::Index>(val_images.size()));
    for (std::size_t i = 0; i < val_images.size(); ++i)
        val.col(static_cast<Eigen::Index>(i)) = flatten(val_images[i], arch);

    VaeParams p = init_vae_params(arch, mix_seed(cfg.rng_seed, kInitTag));
    p.input_offset = all.rowwise().mean();
    AdamState st;
    st.m = zero_gradients(p);
    st.v = zero_gradients(p);

    std::vector<std::size_t> order(train_images.size());
    std::iota(order.begin(), order.end(), 0);
    const int d = arch.latent_dim;
    BatchResult batch; // gradient buffers reused across batches
    batch.grads = zero_gradients(p);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.rng_seed, kShuffleTag, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0, mse_sum = 0.0, kl_sum = 0.0;
        std::size_t seen = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size();
             start += cfg.batch_size, ++batch_index) {
            const std::size_t count = std::min<std::size_t>(cfg.batch_size,
                                                            order.size() - start);
            MatrixXd X(n, static_cast<Eigen::Index>(count));
            for (std::size_t c = 0; c < count; ++c)
                X.col(static_cast<Eigen::Index>(c)) =
                    all.col(static_cast<Eigen::Index>(order[start + c]));
            Rng noise(mix_seed(mix_seed(cfg.rng_seed, kNoiseTag),
                               static_cast<std::uint64_t>(epoch), batch_index));
            MatrixXd Eps(d, static_cast<Eigen::Index>(count));
            for (Eigen::Index c = 0; c < Eps.cols(); ++c)
                for (int i = 0; i < d; ++i) Eps(i, c) = noise.normal();

            try {
                elbo_batch_into(p, X, Eps, cfg.kl_weight, batch);
            } catch (const std::runtime_error&) {
                throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                         std::to_string(epoch));
            }
            apply_update(p, batch.grads, cfg, st);
            loss_sum += batch.loss * static_cast<double>(count);
            mse_sum += batch.mse_term * static_cast<double>(count);
            kl_sum += batch.kl_term * static_cast<double>(count);
            seen += count;
        }

        TrainTraceRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(seen);
        row.mse_term = mse_sum / static_cast<double>(seen);
        row.kl_term = kl_sum / static_cast<double>(seen);
        if (val.cols() > 0) {
            // deterministic validation: posterior mean, no sampling
            const MatrixXd enc_out = encoder_forward(p, val.colwise() - p.input_offset, nullptr);
            const MatrixXd Mu = enc_out.topRows(d);
            const MatrixXd Lv = enc_out.bottomRows(d);
            const MatrixXd Y = decoder_forward(p, Mu, nullptr);
            const double mse_v =
                (Y - val).array().square().sum() / (static_cast<double>(n) * val.cols());
            const double kl_v =
                0.5 * (Lv.array().exp() + Mu.array().square() - Lv.array() - 1.0).sum() /
                static_cast<double>(val.cols());
            row.val_loss = mse_v + cfg.kl_weight * kl_v;
        } else {
            row.val_loss = std::numeric_limits<double>::quiet_NaN();
        }
        if (trace) trace->push_back(row);
        if (!std::isfinite(row.train_loss))
            throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                     std::to_string(epoch));
    }
    return p;
}

Volume reconstruct(const VaeParams& p, const Volume& x) {
    return decode(p, encode(p, x).mu);
}

// --- checkpoint container ------------------------------------------------------
//
// Single file: 8-byte magic, little-endian u64 JSON length, JSON descriptor
// (architecture + tensor manifest), then float32 blobs in manifest order.

namespace {

constexpr char kMagic[8] = {'P', 'H', 'V', 'A', 'E', '0', '1', '\n'};

void append_tensor_manifest(json& tensors, const std::string& name, Eigen::Index rows,
                            Eigen::Index cols) {
    json t;
    t["name"] = name;
    t["shape"] = {rows, cols};
    tensors.push_back(t);
}

void write_blob(std::ofstream& out, const double* data, std::size_t count) {
    std::vector<float> raw(count);
    for (std::size_t i = 0; i < count; ++i) raw[i] = static_cast<float>(data[i]);
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(count * 4));
}

void read_blob(std::ifstream& in, double* data, std::size_t count, const fs::path& path) {
    std::vector<float> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * 4));
    if (static_cast<std::size_t>(in.gcount()) != count * 4)
        throw ValidationError("truncated checkpoint " + path.string());
    for (std::size_t i = 0; i < count; ++i) data[i] = raw[i];
}

} // namespace

void save_checkpoint(const VaeParams& p, const fs::path& path) {
    p.validate();
    json arch;
    arch["kind"] = p.arch.kind;
    arch["input_dims"] = {p.arch.input_dims[0], p.arch.input_dims[1], p.arch.input_dims[2]};
    arch["input_spacing"] = {p.arch.input_spacing[0], p.arch.input_spacing[1],
                             p.arch.input_spacing[2]};
    arch["latent_dim"] = p.arch.latent_dim;
    arch["encoder_hidden"] = p.arch.encoder_hidden;
    arch["decoder_hidden"] = p.arch.decoder_hidden;

    json tensors = json::array();
    append_tensor_manifest(tensors, "input_offset", p.input_offset.size(), 1);
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
        append_tensor_manifest(tensors, "encoder." + std::to_string(l) + ".W",
                               p.encoder[l].W.rows(), p.encoder[l].W.cols());
        append_tensor_manifest(tensors, "encoder." + std::to_string(l) + ".b",
                               p.encoder[l].b.size(), 1);
    }
    for (std::size_t l = 0; l < p.decoder.size(); ++l) {
        append_tensor_manifest(tensors, "decoder." + std::to_string(l) + ".W",
                               p.decoder[l].W.rows(), p.decoder[l].W.cols());
        append_tensor_manifest(tensors, "decoder." + std::to_string(l) + ".b",
                               p.decoder[l].b.size(), 1);
    }
    json j;
    j["format"] = "phrec-vae-checkpoint";
    j["dtype"] = "f32le";
    j["arch"] = arch;
    j["tensors"] = tensors;
    const std::string header = j.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic, 8);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_blob(out, p.input_offset.data(), static_cast<std::size_t>(p.input_offset.size()));
    for (const auto& l : p.encoder) {
        write_blob(out, l.W.data(), static_cast<std::size_t>(l.W.size()));
        write_blob(out, l.b.data(), static_cast<std::size_t>(l.b.size()));
    }
    for (const auto& l : p.decoder) {
        write_blob(out, l.W.data(), static_cast<std::size_t>(l.W.size()));
        write_blob(out, l.b.data(), static_cast<std::size_t>(l.b.size()));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

VaeParams load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw ValidationError("not a phrec VAE checkpoint: " + path.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(in.gcount()) != len)
        throw ValidationError("truncated checkpoint " + path.string());
    json j;
    try {
        j = json::parse(header);
    } catch (const json::exception& e) {
        throw ValidationError("bad checkpoint header: " + std::string(e.what()));
    }

    VaeParams p;
    try {
        const json& arch = j.at("arch");
        p.arch.kind = arch.value("kind", "dense");
        auto dims = arch.at("input_dims");
        p.arch.input_dims = {dims.at(0).get<int>(), dims.at(1).get<int>(), dims.at(2).get<int>()};
        auto sp = arch.at("input_spacing");
        p.arch.input_spacing = {sp.at(0).get<double>(), sp.at(1).get<double>(),
                                sp.at(2).get<double>()};
        p.arch.latent_dim = arch.at("latent_dim").get<int>();
        p.arch.encoder_hidden = arch.at("encoder_hidden").get<std::vector<int>>();
        p.arch.decoder_hidden = arch.at("decoder_hidden").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw ValidationError("bad checkpoint architecture: " + std::string(e.what()));
    }
    p.arch.validate();

    p.input_offset.resize(static_cast<Eigen::Index>(p.arch.input_size()));
    read_blob(in, p.input_offset.data(), static_cast<std::size_t>(p.input_offset.size()), path);
    auto read_stack = [&](const std::vector<int>& sizes) {
        std::vector<DenseLayer> layers;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            DenseLayer layer;
            layer.W.resize(sizes[l + 1], sizes[l]);
            layer.b.resize(sizes[l + 1]);
            read_blob(in, layer.W.data(), static_cast<std::size_t>(layer.W.size()), path);
            read_blob(in, layer.b.data(), static_cast<std::size_t>(layer.b.size()), path);
            layers.push_back(std::move(layer));
        }
        return layers;
    };
    p.encoder = read_stack(encoder_sizes(p.arch));
    p.decoder = read_stack(decoder_sizes(p.arch));
    p.validate();
    return p;
}

Eigen::VectorXd Reconstructor::latent_mean(const Volume&) const {
    throw ValidationError(name() + " model has no latent space");
}

VaeModel::VaeModel(VaeParams params) : params_(std::move(params)) { params_.validate(); }

Volume VaeModel::reconstruct(const Volume& x) const { return phrec::reconstruct(params_, x); }

Eigen::VectorXd VaeModel::latent_mean(const Volume& x) const { return encode(params_, x).mu; }

std::unique_ptr<Reconstructor> identity_baseline() { return std::make_unique<IdentityModel>(); }

} // namespace phrec
