#pragma once

#include <cmath>
#include <string>

#include "fhvae/error.hpp"

namespace fhvae {

enum class ModelMode { FHVAE, VAE };
enum class CellType { Recurrent, Feedforward };

inline std::string to_string(ModelMode m) { return m == ModelMode::FHVAE ? "fhvae" : "vae"; }
inline std::string to_string(CellType c) { return c == CellType::Recurrent ? "recurrent" : "feedforward"; }

inline ModelMode parse_model_mode(const std::string& s) {
	if (s == "fhvae") return ModelMode::FHVAE;
	if (s == "vae") return ModelMode::VAE;
	throw ConfigError("unknown model mode '" + s + "' (expected fhvae|vae)");
}

inline CellType parse_cell_type(const std::string& s) {
	if (s == "recurrent" || s == "lstm") return CellType::Recurrent;
	if (s == "feedforward" || s == "mlp") return CellType::Feedforward;
	throw ConfigError("unknown cell type '" + s + "' (expected recurrent|feedforward)");
}

/// Latent sizes, prior variances and segment geometry.
struct LatentConfig {
	int dim_z1 = 32;
	int dim_z2 = 32;
	int dim_z_vae = 64;
	double var_mu2 = 1.0;
	double var_z1 = 1.0;
	double var_z2 = 0.25;
	/// Variance of q(mu2); kept for completeness, the point estimate in the table is what the bound uses.
	double var_mu2_post = std::exp(-2.0);
	int input_width = 20;
	int input_dim = 80;

	int frame_size() const { return input_width * input_dim; }

	void validate() const {
		if (dim_z1 < 1 || dim_z2 < 1 || dim_z_vae < 1) throw ConfigError("latent dims must be >= 1");
		if (!(var_mu2 > 0) || !(var_z1 > 0) || !(var_z2 > 0) || !(var_mu2_post > 0))
			throw ConfigError("prior variances must be strictly positive");
		if (input_width < 1) throw ConfigError("input_width must be >= 1");
		if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
	}

	bool operator==(const LatentConfig&) const = default;
};

/// Network body shared by both encoders and the decoder.
struct ArchConfig {
	int layers = 1;
	int units = 64;
	CellType cell = CellType::Recurrent;
	ModelMode mode = ModelMode::FHVAE;

	void validate() const {
		if (layers < 1) throw ConfigError("layers must be >= 1");
		if (units < 1) throw ConfigError("units must be >= 1");
	}

	bool operator==(const ArchConfig&) const = default;
};

} // namespace fhvae
