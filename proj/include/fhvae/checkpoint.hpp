#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "fhvae/data.hpp"
#include "fhvae/model.hpp"

// Checkpoint container:
//   "FHCK", u32 version, u32 header length, JSON header (latent config,
//   architecture, parameter count, table shape and ids), then every model
//   parameter followed by the s-vector table rows, as float64 little-endian.

namespace fhvae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
	ModelParams params;
	SVectorTable table;
};

inline nlohmann::json to_json(const LatentConfig& c) {
	return {{"dim_z1", c.dim_z1},         {"dim_z2", c.dim_z2},         {"dim_z_vae", c.dim_z_vae},
			{"var_mu2", c.var_mu2},       {"var_z1", c.var_z1},         {"var_z2", c.var_z2},
			{"var_mu2_post", c.var_mu2_post}, {"input_width", c.input_width}, {"input_dim", c.input_dim}};
}

inline nlohmann::json to_json(const ArchConfig& a) {
	return {{"layers", a.layers}, {"units", a.units}, {"cell", to_string(a.cell)}, {"mode", to_string(a.mode)}};
}

inline LatentConfig latent_from_json(const nlohmann::json& j) {
	LatentConfig c;
	c.dim_z1 = j.at("dim_z1");
	c.dim_z2 = j.at("dim_z2");
	c.dim_z_vae = j.at("dim_z_vae");
	c.var_mu2 = j.at("var_mu2");
	c.var_z1 = j.at("var_z1");
	c.var_z2 = j.at("var_z2");
	c.var_mu2_post = j.at("var_mu2_post");
	c.input_width = j.at("input_width");
	c.input_dim = j.at("input_dim");
	c.validate();
	return c;
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
	ArchConfig a;
	a.layers = j.at("layers");
	a.units = j.at("units");
	a.cell = parse_cell_type(j.at("cell"));
	a.mode = parse_model_mode(j.at("mode"));
	a.validate();
	return a;
}

inline std::string encode_checkpoint(const ModelParams& p, const SVectorTable& table) {
	const nlohmann::json header = {{"latent", to_json(p.latent)},
								   {"arch", to_json(p.arch)},
								   {"param_count", nn::parameter_count(p)},
								   {"table_rows", table.size()},
								   {"table_dim", table.dim()},
								   {"table_ids", table.ids()}};
	const std::string h = header.dump();
	std::string out = "FHCK";
	detail::put_u32(out, kCheckpointVersion);
	detail::put_u32(out, std::uint32_t(h.size()));
	out += h;
	auto put_f64 = [&](double v) {
		const auto bits = std::bit_cast<std::uint64_t>(v);
		for (int k = 0; k < 8; ++k) out.push_back(char((bits >> (8 * k)) & 0xFFu));
	};
	p.visit([&](nn::ParamSpan s) {
		for (double v : s) put_f64(v);
	});
	for (Eigen::Index i = 0; i < table.size(); ++i)
		for (Eigen::Index j = 0; j < table.dim(); ++j) put_f64(table.rows()(i, j));
	return out;
}

inline Checkpoint decode_checkpoint(std::string bytes) {
	detail::ByteReader in(std::move(bytes));
	in.need(4, "magic");
	if (in.str(4, "magic") != "FHCK") throw FormatError("bad checkpoint magic", 0);
	const auto version_at = in.offset();
	if (in.u32("version") != kCheckpointVersion) throw FormatError("unsupported checkpoint version", version_at);
	const std::uint32_t hlen = in.u32("header length");
	const auto header_at = in.offset();
	nlohmann::json header;
	try {
		header = nlohmann::json::parse(in.str(hlen, "header"));
	} catch (const nlohmann::json::exception& e) {
		throw FormatError(std::string("bad checkpoint header: ") + e.what(), header_at);
	}
	Checkpoint ck;
	try {
		ck.params = ModelParams(latent_from_json(header.at("latent")), arch_from_json(header.at("arch")));
		if (header.at("param_count").get<std::size_t>() != nn::parameter_count(ck.params))
			throw FormatError("parameter count does not match architecture", header_at);
		const auto rows = header.at("table_rows").get<Eigen::Index>();
		const auto dim = header.at("table_dim").get<Eigen::Index>();
		auto ids = header.at("table_ids").get<std::vector<std::string>>();
		if (Eigen::Index(ids.size()) != rows) throw FormatError("table id count mismatch", header_at);
		if (dim > 0) ck.table = SVectorTable(std::move(ids), int(dim));
	} catch (const nlohmann::json::exception& e) {
		throw FormatError(std::string("bad checkpoint header: ") + e.what(), header_at);
	} catch (const ConfigError& e) {
		throw FormatError(std::string("bad checkpoint header: ") + e.what(), header_at);
	}
	auto get_f64 = [&]() {
		std::uint64_t lo = in.u32("parameters");
		std::uint64_t hi = in.u32("parameters");
		return std::bit_cast<double>(lo | (hi << 32));
	};
	ck.params.visit([&](nn::ParamSpan s) {
		for (double& v : s) v = get_f64();
	});
	for (Eigen::Index i = 0; i < ck.table.size(); ++i)
		for (Eigen::Index j = 0; j < ck.table.dim(); ++j) ck.table.rows()(i, j) = get_f64();
	if (!in.done()) throw FormatError("trailing bytes after checkpoint payload", in.offset());
	return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& p, const SVectorTable& table) {
	detail::write_file(path, encode_checkpoint(p, table));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
	return decode_checkpoint(detail::read_file(path));
}

} // namespace fhvae
