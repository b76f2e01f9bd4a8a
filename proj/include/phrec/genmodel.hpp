#pragma once

#include "phrec/rng.hpp"
#include "phrec/volume.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace phrec {

struct LatentStats {
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma; // strictly positive
};

struct DenseLayer {
    Eigen::MatrixXd W; // (out x in)
    Eigen::VectorXd b;
};

/// Fully-connected reference architecture: encoder voxels -> hidden... -> 2d
/// (mu, log-variance), mirror decoder ending in a sigmoid. Hidden layers use
/// tanh. Convolutional descriptors can be stored in checkpoints but are not
/// built by this implementation.
struct VaeArchitecture {
    Dims3 input_dims{16, 16, 16};
    Spacing3 input_spacing{8.0, 8.0, 8.0};
    int latent_dim = 256;
    std::vector<int> encoder_hidden{1024, 256};
    std::vector<int> decoder_hidden{256, 1024};
    std::string kind = "dense"; // only "dense" is buildable

    std::size_t input_size() const {
        return static_cast<std::size_t>(input_dims[0]) * input_dims[1] * input_dims[2];
    }
    void validate() const;
};

struct VaeParams {
    VaeArchitecture arch;
    // voxelwise offset subtracted before the encoder (the training-set mean;
    // folds into the first-layer bias, kept explicit for conditioning)
    Eigen::VectorXd input_offset;
    std::vector<DenseLayer> encoder; // final layer emits 2 * latent_dim
    std::vector<DenseLayer> decoder; // final layer emits input_size (sigmoid)

    void validate() const;
};

VaeParams init_vae_params(const VaeArchitecture& arch, std::uint64_t seed);

LatentStats encode(const VaeParams& p, const Volume& x);

/// z = mu + sigma .* eps with eps drawn from the given stream.
Eigen::VectorXd reparameterize(const LatentStats& stats, Rng& rng);

Volume decode(const VaeParams& p, const Eigen::VectorXd& z);

/// 0.5 * sum(sigma^2 + mu^2 - log sigma^2 - 1); zero exactly at the prior.
double kl_divergence(const LatentStats& stats);

struct VaeGradients {
    std::vector<DenseLayer> encoder;
    std::vector<DenseLayer> decoder;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    int epochs = 60;
    int batch_size = 8;
    double learning_rate = 1e-3;
    std::string optimizer = "adam"; // "adam" or "sgd"
    AdamConfig adam;
    std::uint64_t rng_seed = 1;
    double kl_weight = 1.0;

    void validate() const;
};

struct ElboResult {
    double loss = 0.0;
    double mse_term = 0.0;
    double kl_term = 0.0;
    VaeGradients grads;
};

/// loss = MSE(x, decode(reparameterize(encode(x)))) + kl_weight * KL, with
/// gradients for every tensor. Deterministic given noise_seed.
ElboResult elbo_loss(const VaeParams& p, const Volume& x, std::uint64_t noise_seed,
                     const TrainConfig& cfg);

struct TrainTraceRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double mse_term = 0.0;
    double kl_term = 0.0;
};

/// Deterministic training loop (fixed shuffle and noise streams derived from
/// cfg.rng_seed). Validation loss uses posterior-mean reconstructions, no
/// sampling. Aborts with the trace filled when the loss stops being finite.
VaeParams train_vae(const std::vector<Volume>& train_images,
                    const std::vector<Volume>& val_images, const VaeArchitecture& arch,
                    const TrainConfig& cfg, std::vector<TrainTraceRow>* trace = nullptr);

/// Posterior-mean reconstruction decode(mu(x)); evaluation never samples.
Volume reconstruct(const VaeParams& p, const Volume& x);

void save_checkpoint(const VaeParams& p, const std::filesystem::path& path);
VaeParams load_checkpoint(const std::filesystem::path& path);

/// Reconstructor facade shared by the VAE and the identity baseline.
class Reconstructor {
public:
    virtual ~Reconstructor() = default;
    virtual Volume reconstruct(const Volume& x) const = 0;
    virtual std::string name() const = 0;
    virtual bool has_latent() const { return false; }
    virtual Eigen::VectorXd latent_mean(const Volume& x) const;
};

class VaeModel : public Reconstructor {
public:
    explicit VaeModel(VaeParams params);
    Volume reconstruct(const Volume& x) const override;
    std::string name() const override { return "vae"; }
    bool has_latent() const override { return true; }
    Eigen::VectorXd latent_mean(const Volume& x) const override;
    const VaeParams& params() const { return params_; }

private:
    VaeParams params_;
};

class IdentityModel : public Reconstructor {
public:
    Volume reconstruct(const Volume& x) const override { return x; }
    std::string name() const override { return "identity"; }
};

std::unique_ptr<Reconstructor> identity_baseline();

} // namespace phrec
