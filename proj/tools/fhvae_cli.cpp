#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fhvae/fhvae.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fhvae;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr const char* kDataRootEnv = "FHVAE_DATA_ROOT";

/// Raised for problems detected before any output is written.
struct UsageError : std::runtime_error {
	using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
	for (char& ch : s)
		if (ch == '\n' || ch == '\r') ch = ' ';
	return s;
}

struct Common {
	std::string config;
	std::string data_root;
	std::string out;
	std::uint64_t seed = 0;
	bool quiet = false;
};

struct ModelOpts {
	double alpha = 10.0;
	std::string seq_label = "uttid";
	std::string mode = "fhvae";
	std::string cell = "recurrent";
	int layers = 1;
	int units = 64;
	int dim_z1 = 32;
	int dim_z2 = 32;
	int dim_z = 64;
	int width = 20;
	double var_mu2 = 1.0;
	double var_z1 = 1.0;
	double var_z2 = 0.25;
	int epochs = 500;
	int patience = 50;
	int batch_size = 128;
	double lr = 1e-3;
	double l2 = 1e-4;
};

struct Datasets {
	std::string train = "train.tsv";
	std::string dev = "dev.tsv";
	std::string clean_test = "test_clean.tsv";
	std::string shifted_test = "test_shifted.tsv";
};

void add_common(CLI::App* app, Common& c, bool out_required_note) {
	app->add_option("--config", c.config, "JSON file of option values (keys are long flag names)");
	app->add_option("--data-root", c.data_root, std::string("Base directory for relative data paths (default $") +
													kDataRootEnv + " or .)");
	app->add_option("--out", c.out, out_required_note ? "Output directory (required)" : "Output directory");
	app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
	app->add_flag("--quiet", c.quiet, "Suppress progress output");
}

void add_model(CLI::App* app, ModelOpts& m) {
	app->add_option("--alpha", m.alpha, "Weight of the discriminative term")->capture_default_str();
	app->add_option("--seq-label", m.seq_label, "Sequence grouping: uttid|speaker|noise")
		->check(CLI::IsMember({"uttid", "speaker", "noise"}))
		->capture_default_str();
	app->add_option("--mode", m.mode, "Model: fhvae|vae")->check(CLI::IsMember({"fhvae", "vae"}))->capture_default_str();
	app->add_option("--cell", m.cell, "Cell: recurrent|feedforward")
		->check(CLI::IsMember({"recurrent", "lstm", "feedforward", "mlp"}))
		->capture_default_str();
	app->add_option("--layers", m.layers, "Hidden layers per network")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--units", m.units, "Units per hidden layer")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--dim-z1", m.dim_z1, "Dimension of z1")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--dim-z2", m.dim_z2, "Dimension of z2")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--dim-z", m.dim_z, "Latent dimension of the VAE")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--width", m.width, "Window width in frames")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--var-mu2", m.var_mu2, "Prior variance of mu2")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--var-z1", m.var_z1, "Prior variance of z1")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--var-z2", m.var_z2, "Prior variance of z2 around mu2")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--epochs", m.epochs, "Maximum epochs")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--patience", m.patience, "Early-stopping patience in epochs")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--batch-size", m.batch_size, "Minibatch size")->check(CLI::PositiveNumber)->capture_default_str();
	app->add_option("--lr", m.lr, "Adam learning rate")->check(CLI::NonNegativeNumber)->capture_default_str();
	app->add_option("--l2", m.l2, "L2 weight")->check(CLI::NonNegativeNumber)->capture_default_str();
}

/// Fills options not given on the command line from the JSON config file.
void apply_config_file(CLI::App* app, const std::string& path) {
	if (path.empty()) return;
	json j;
	try {
		std::ifstream in(path);
		if (!in) throw UsageError("cannot open config file " + path);
		j = json::parse(in);
	} catch (const json::exception& e) {
		throw UsageError("config file " + path + ": " + e.what());
	}
	if (!j.is_object()) throw UsageError("config file " + path + ": expected a JSON object");
	for (const auto& [key, value] : j.items()) {
		CLI::Option* opt = app->get_option_no_throw("--" + key);
		if (opt == nullptr || key == "config") throw UsageError("config file " + path + ": unknown key '" + key + "'");
		if (opt->count() > 0) continue;
		std::string text = value.is_string() ? value.get<std::string>() : value.dump();
		if (value.is_array()) {
			text.clear();
			for (const auto& v : value) text += (text.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
		}
		try {
			opt->add_result(text);
			opt->run_callback();
		} catch (const CLI::Error& e) {
			throw UsageError("config file " + path + ": key '" + key + "': " + e.what());
		}
	}
}

json resolved_config(const CLI::App* app) {
	json j;
	j["command"] = app->get_name();
	for (const CLI::Option* opt : app->get_options()) {
		const std::string name = opt->get_single_name();
		if (name.empty() || name == "help" || name == "help-all" || name == "config") continue;
		std::string v;
		if (!opt->results().empty()) {
			for (const auto& r : opt->results()) v += (v.empty() ? "" : ",") + r;
		} else if (opt->get_type_size() == 0) {
			v = "false";
		} else {
			v = opt->get_default_str();
		}
		j[name] = json::accept(v) ? json::parse(v) : json(v);
	}
	return j;
}

fs::path data_root(const Common& c) {
	if (!c.data_root.empty()) return c.data_root;
	if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
	return ".";
}

void echo_config(const fs::path& dir, const CLI::App* app, const Common& c) {
	json j = resolved_config(app);
	j["data-root"] = data_root(c).string();
	detail::write_file(dir / "config.json", j.dump(2) + '\n');
}

fs::path resolve(const Common& c, const std::string& p) {
	const fs::path path(p);
	return path.is_absolute() ? path : data_root(c) / path;
}

fs::path require_out(const Common& c) {
	if (c.out.empty()) throw UsageError("--out is required");
	return c.out;
}

void require_file(const fs::path& p, const char* what) {
	if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

LatentConfig latent_of(const ModelOpts& m, int input_dim) {
	LatentConfig lc;
	lc.dim_z1 = m.dim_z1;
	lc.dim_z2 = m.dim_z2;
	lc.dim_z_vae = m.dim_z;
	lc.input_width = m.width;
	lc.input_dim = input_dim;
	lc.var_mu2 = m.var_mu2;
	lc.var_z1 = m.var_z1;
	lc.var_z2 = m.var_z2;
	return lc;
}

ArchConfig arch_of(const ModelOpts& m) {
	ArchConfig ac;
	ac.layers = m.layers;
	ac.units = m.units;
	ac.cell = parse_cell_type(m.cell);
	ac.mode = parse_model_mode(m.mode);
	return ac;
}

TrainConfig train_config_of(const ModelOpts& m, std::uint64_t seed) {
	TrainConfig tc;
	tc.alpha = m.alpha;
	tc.max_epochs = m.epochs;
	tc.patience_epochs = m.patience;
	tc.batch_size = m.batch_size;
	tc.lr = m.lr;
	tc.l2_weight = m.l2;
	tc.seed = seed;
	return tc;
}

/// Config errors found while building typed configs are usage errors.
template <class F>
auto as_usage(F&& f) {
	try {
		return f();
	} catch (const ConfigError& e) {
		throw UsageError(e.what());
	}
}

struct Trained {
	ModelParams params;
	SVectorTable table;
	TrainReport report;
};

Trained train_model(const Dataset& train_in, const Dataset& dev, const ModelOpts& m, std::uint64_t seed,
					const fs::path& out, bool quiet) {
	const ArchConfig ac = arch_of(m);
	const LatentConfig lc = latent_of(m, int(train_in.utterances.front().dim()));
	const TrainConfig tc = train_config_of(m, seed);
	const Dataset train = group_sequences_by_label(train_in, parse_seq_label(m.seq_label));
	Trained t{ModelParams::initialized(lc, ac, seed), {}, {}};
	if (ac.mode == ModelMode::FHVAE) t.table = make_table(train, lc);
	FitOptions fo;
	fo.checkpoint_path = out / "model.ck";
	if (!quiet) {
		fo.on_epoch = [](const EpochRecord& e) {
			std::cerr << "epoch " << e.epoch << " train " << e.train.total << " dev " << e.dev.total
					  << (e.improved ? " *" : "") << '\n';
		};
	}
	t.report = fit(train, dev, t.params, t.table, tc, fo);
	write_report(out / "report.jsonl", t.report);
	return t;
}

// ---------------------------------------------------------------------------

int run_datagen(CLI::App* app, const Common& c, SyntheticSpec& s) {
	const fs::path out = c.out.empty() ? data_root(c) : fs::path(c.out);
	s.seed = c.seed;
	as_usage([&] {
		s.validate();
		return 0;
	});
	const SyntheticCorpus corpus = generate_synthetic(s);
	save_dataset(out, "train", corpus.train);
	save_dataset(out, "dev", corpus.dev);
	save_dataset(out, "test_clean", corpus.test_clean);
	save_dataset(out, "test_shifted", corpus.test_shifted);
	echo_config(out, app, c);
	if (!c.quiet)
		std::cout << "wrote " << corpus.train.size() << " train, " << corpus.dev.size() << " dev, "
				  << corpus.test_clean.size() << " clean test, " << corpus.test_shifted.size()
				  << " shifted test utterances to " << out.string() << '\n';
	return 0;
}

int run_train(CLI::App* app, const Common& c, const ModelOpts& m, const Datasets& d) {
	const fs::path out = require_out(c);
	as_usage([&] {
		arch_of(m).validate();
		latent_of(m, 4).validate();
		train_config_of(m, c.seed).validate();
		return 0;
	});
	const fs::path train_path = resolve(c, d.train), dev_path = resolve(c, d.dev);
	require_file(train_path, "train manifest");
	require_file(dev_path, "dev manifest");
	const Dataset train = load_manifest(train_path);
	const Dataset dev = load_manifest(dev_path);
	if (train.empty() || dev.empty()) throw DataError("train and dev manifests must be nonempty");
	echo_config(out, app, c);
	const Trained t = train_model(train, dev, m, c.seed, out, c.quiet);
	if (!c.quiet)
		std::cout << "best dev bound " << t.report.best_dev_bound << " at epoch " << t.report.best_epoch << "; stopped at "
				  << t.report.stop_epoch << "; checkpoint " << (out / "model.ck").string() << '\n';
	return 0;
}

int run_extract(CLI::App* app, const Common& c, const std::string& checkpoint, const std::string& manifest,
				const std::string& feature) {
	const fs::path out = require_out(c);
	if (checkpoint.empty() || manifest.empty()) throw UsageError("--checkpoint and --manifest are required");
	const ExtractionMode mode = as_usage([&] { return parse_extraction_mode(feature); });
	const fs::path ck_path = resolve(c, checkpoint), man_path = resolve(c, manifest);
	require_file(ck_path, "checkpoint");
	require_file(man_path, "manifest");
	const Checkpoint ck = load_checkpoint(ck_path);
	const Dataset ds = load_manifest(man_path);
	FeatureArchive archive;
	for (const auto& u : ds.utterances) {
		const Vector* row = nullptr;
		Vector mu2;
		if (mode == ExtractionMode::Z1_MU2 && ck.table.size() > 0) {
			if (const Eigen::Index i = ck.table.find(u.id); i >= 0) {
				mu2 = ck.table.lookup(i);
				row = &mu2;
			}
		}
		archive.records.push_back(ArchiveRecord::from_matrix(u.id, extract_features(u.frames, ck.params, mode, row)));
	}
	const fs::path dest = out / (man_path.stem().string() + "." + to_string(mode) + ".farc");
	write_archive(dest, archive);
	echo_config(out, app, c);
	if (!c.quiet) std::cout << "wrote " << archive.records.size() << " utterances to " << dest.string() << '\n';
	return 0;
}

struct EvalSets {
	Dataset clean_train;
	Dataset clean_test;
	Dataset shifted_test;
};

EvalSets load_eval_sets(const Common& c, const Datasets& d) {
	const fs::path tr = resolve(c, d.train), a = resolve(c, d.clean_test), b = resolve(c, d.shifted_test);
	require_file(tr, "train manifest");
	require_file(a, "clean test manifest");
	require_file(b, "shifted test manifest");
	EvalSets s;
	const Dataset train = load_manifest(tr);
	s.clean_train = train.filter("domain", kCleanDomain);
	if (s.clean_train.empty()) s.clean_train = train;
	s.clean_test = load_manifest(a);
	s.shifted_test = load_manifest(b);
	return s;
}

int run_eval_invariance(CLI::App* app, const Common& c, const Datasets& d, const std::string& fhvae_ck,
						const std::string& vae_ck, const std::vector<std::string>& feature_names) {
	const fs::path out = require_out(c);
	std::vector<ReportFeature> features;
	for (const auto& f : feature_names) features.push_back(as_usage([&] { return parse_report_feature(f); }));
	if (features.empty()) {
		features.push_back(ReportFeature::Raw);
		if (!vae_ck.empty()) features.push_back(ReportFeature::Z_VAE);
		if (!fhvae_ck.empty()) {
			features.push_back(ReportFeature::Z1);
			features.push_back(ReportFeature::Z1_MU2);
		}
	}
	for (ReportFeature f : features) {
		if (f == ReportFeature::Z_VAE && vae_ck.empty()) throw UsageError("feature 'z' needs --vae");
		if ((f == ReportFeature::Z1 || f == ReportFeature::Z1_MU2) && fhvae_ck.empty())
			throw UsageError("feature '" + to_string(f) + "' needs --fhvae");
	}
	if (!fhvae_ck.empty()) require_file(resolve(c, fhvae_ck), "FHVAE checkpoint");
	if (!vae_ck.empty()) require_file(resolve(c, vae_ck), "VAE checkpoint");
	const EvalSets sets = load_eval_sets(c, d);
	std::optional<Checkpoint> fh, va;
	ReportModels models;
	if (!fhvae_ck.empty()) {
		fh = load_checkpoint(resolve(c, fhvae_ck));
		if (fh->params.mode() != ModelMode::FHVAE) throw InputContractError("--fhvae checkpoint is not an FHVAE model");
		models.fhvae = &fh->params;
		models.table = &fh->table;
	}
	if (!vae_ck.empty()) {
		va = load_checkpoint(resolve(c, vae_ck));
		if (va->params.mode() != ModelMode::VAE) throw InputContractError("--vae checkpoint is not a VAE model");
		models.vae = &va->params;
	}
	ProbeOptions po;
	po.seed = c.seed;
	InvarianceReport rep = invariance_report(models, sets.clean_train, sets.clean_test, sets.shifted_test, features, po);
	rep.metadata["fhvae"] = fhvae_ck;
	rep.metadata["vae"] = vae_ck;
	detail::write_file(out / "invariance.txt", rep.to_text());
	detail::write_file(out / "invariance.json", rep.to_json().dump(2) + '\n');
	echo_config(out, app, c);
	if (!c.quiet) std::cout << rep.to_text();
	return 0;
}

int run_eval_collapse(CLI::App* app, const Common& c, const std::string& checkpoint) {
	if (checkpoint.empty()) throw UsageError("--checkpoint is required");
	const fs::path ck_path = resolve(c, checkpoint);
	require_file(ck_path, "checkpoint");
	const Checkpoint ck = load_checkpoint(ck_path);
	if (ck.params.mode() != ModelMode::FHVAE) throw InputContractError("eval-collapse needs an FHVAE checkpoint");
	const double spread = svector_spread(ck.table);
	if (!c.out.empty()) {
		detail::write_file(fs::path(c.out) / "collapse.json",
						   json{{"checkpoint", checkpoint}, {"rows", ck.table.size()}, {"svector_spread", spread}}.dump(2) +
							   '\n');
		echo_config(c.out, app, c);
	}
	std::cout << "svector_spread " << spread << '\n';
	return 0;
}

int run_sweep_alpha(CLI::App* app, const Common& c, ModelOpts m, const Datasets& d, const std::vector<double>& alphas) {
	const fs::path out = require_out(c);
	if (alphas.empty()) throw UsageError("--alphas must list at least one value");
	for (double a : alphas)
		if (!(a >= 0)) throw UsageError("--alphas values must be >= 0");
	if (parse_model_mode(m.mode) != ModelMode::FHVAE) throw UsageError("sweep-alpha trains FHVAE models (--mode fhvae)");
	as_usage([&] {
		arch_of(m).validate();
		latent_of(m, 4).validate();
		train_config_of(m, c.seed).validate();
		return 0;
	});
	const fs::path tr = resolve(c, d.train), dv = resolve(c, d.dev);
	require_file(tr, "train manifest");
	require_file(dv, "dev manifest");
	const EvalSets sets = load_eval_sets(c, d);
	const Dataset train = load_manifest(tr);
	const Dataset dev = load_manifest(dv);
	echo_config(out, app, c);
	json summary = json::array();
	std::ostringstream text;
	text << "alpha      clean(A)     shifted         avg      spread\n" << std::fixed << std::setprecision(2);
	for (double a : alphas) {
		m.alpha = a;
		std::ostringstream name;
		name << "alpha_" << a;
		const fs::path dir = out / name.str();
		fs::create_directories(dir);
		const Trained t = train_model(train, dev, m, c.seed, dir, c.quiet);
		ProbeOptions po;
		po.seed = c.seed;
		const ReportModels models{&t.params, &t.table, nullptr};
		const InvarianceReport rep =
			invariance_report(models, sets.clean_train, sets.clean_test, sets.shifted_test, {ReportFeature::Z1}, po);
		const InvarianceRow& row = rep.rows.front();
		const double spread = svector_spread(t.table);
		summary.push_back({{"alpha", a},
						   {"clean_error", row.clean_error},
						   {"shifted_error", row.shifted_error},
						   {"average", row.average},
						   {"svector_spread", spread},
						   {"best_epoch", t.report.best_epoch}});
		text << std::left << std::setw(6) << a << std::right << std::setw(12) << row.clean_error << std::setw(12)
			 << row.shifted_error << std::setw(12) << row.average << std::setw(12) << std::setprecision(4) << spread
			 << std::setprecision(2) << '\n';
	}
	detail::write_file(out / "sweep.json", summary.dump(2) + '\n');
	detail::write_file(out / "sweep.txt", text.str());
	if (!c.quiet) std::cout << text.str();
	return 0;
}

} // namespace

int main(int argc, char** argv) {
	CLI::App app{"Factorized hierarchical VAE toolkit"};
	app.require_subcommand(1);
	app.set_help_all_flag("--help-all", "Show help for every subcommand");

	Common common;
	ModelOpts model;
	Datasets sets;
	SyntheticSpec synth;
	std::string checkpoint, manifest, feature = "z1", fhvae_ck, vae_ck;
	std::vector<std::string> features;
	std::vector<double> alphas{0.0, 10.0, 20.0};

	auto* datagen = app.add_subcommand("datagen", "Generate the synthetic two-domain corpus");
	add_common(datagen, common, false);
	datagen->add_option("--speakers", synth.n_speakers, "Number of speakers")->capture_default_str();
	datagen->add_option("--noise-types", synth.n_noise_types, "Clean-domain tilt families")->capture_default_str();
	datagen->add_option("--utts-per-speaker", synth.n_utts_per_speaker, "Train utterances per speaker")->capture_default_str();
	datagen->add_option("--dev-utts-per-speaker", synth.n_dev_utts_per_speaker)->capture_default_str();
	datagen->add_option("--test-utts-per-speaker", synth.n_test_utts_per_speaker)->capture_default_str();
	datagen->add_option("--min-frames", synth.min_frames)->capture_default_str();
	datagen->add_option("--max-frames", synth.max_frames)->capture_default_str();
	datagen->add_option("--dim", synth.dim, "Frame dimension")->capture_default_str();
	datagen->add_option("--width", synth.width, "Segment width in frames")->capture_default_str();
	datagen->add_option("--classes", synth.n_classes, "Segment classes")->capture_default_str();
	datagen->add_option("--speaker-scale", synth.speaker_scale)->capture_default_str();
	datagen->add_option("--tilt-scale", synth.tilt_scale)->capture_default_str();
	datagen->add_option("--noise-std", synth.noise_std)->capture_default_str();
	datagen->add_option("--shift-offset-scale", synth.shift_offset_scale)->capture_default_str();
	datagen->add_option("--shift-noise-mult", synth.shift_noise_mult)->capture_default_str();
	datagen->add_option("--shifted-train-fraction", synth.shifted_train_fraction)->capture_default_str();

	auto* train = app.add_subcommand("train", "Train an FHVAE or VAE model");
	add_common(train, common, true);
	add_model(train, model);
	train->add_option("--train", sets.train, "Train manifest")->capture_default_str();
	train->add_option("--dev", sets.dev, "Dev manifest")->capture_default_str();

	auto* extract = app.add_subcommand("extract", "Write frame-aligned latent features to an archive");
	add_common(extract, common, true);
	extract->add_option("--checkpoint", checkpoint, "Model checkpoint (required)");
	extract->add_option("--manifest", manifest, "Manifest of utterances (required)");
	extract->add_option("--feature", feature, "z1|z|z1z2|z1mu2")
		->check(CLI::IsMember({"z1", "z", "z1z2", "z1mu2"}))
		->capture_default_str();

	auto* inv = app.add_subcommand("eval-invariance", "Clean vs shifted probe errors per feature");
	add_common(inv, common, true);
	inv->add_option("--fhvae", fhvae_ck, "FHVAE checkpoint");
	inv->add_option("--vae", vae_ck, "VAE checkpoint");
	inv->add_option("--features", features, "Subset of raw,z,z1,z1mu2")->delimiter(',');
	inv->add_option("--train", sets.train, "Train manifest (clean-domain part trains the probe)")->capture_default_str();
	inv->add_option("--clean-test", sets.clean_test)->capture_default_str();
	inv->add_option("--shifted-test", sets.shifted_test)->capture_default_str();

	auto* col = app.add_subcommand("eval-collapse", "Spread of the s-vector table");
	add_common(col, common, false);
	col->add_option("--checkpoint", checkpoint, "FHVAE checkpoint (required)");

	auto* sweep = app.add_subcommand("sweep-alpha", "Train one FHVAE per alpha and compare z1 invariance");
	add_common(sweep, common, true);
	add_model(sweep, model);
	sweep->add_option("--alphas", alphas, "Comma-separated alpha values")->delimiter(',')->capture_default_str();
	sweep->add_option("--train", sets.train)->capture_default_str();
	sweep->add_option("--dev", sets.dev)->capture_default_str();
	sweep->add_option("--clean-test", sets.clean_test)->capture_default_str();
	sweep->add_option("--shifted-test", sets.shifted_test)->capture_default_str();

	try {
		app.parse(argc, argv);
	} catch (const CLI::CallForHelp& e) {
		return app.exit(e);
	} catch (const CLI::CallForAllHelp& e) {
		return app.exit(e);
	} catch (const CLI::ParseError& e) {
		std::cerr << "fhvae: usage error: " << one_line(e.what()) << '\n';
		return kExitUsage;
	}

	CLI::App* sub = app.get_subcommands().front();
	try {
		apply_config_file(sub, common.config);
		if (sub == datagen) return run_datagen(sub, common, synth);
		if (sub == train) return run_train(sub, common, model, sets);
		if (sub == extract) return run_extract(sub, common, checkpoint, manifest, feature);
		if (sub == inv) return run_eval_invariance(sub, common, sets, fhvae_ck, vae_ck, features);
		if (sub == col) return run_eval_collapse(sub, common, checkpoint);
		if (sub == sweep) return run_sweep_alpha(sub, common, model, sets, alphas);
	} catch (const UsageError& e) {
		std::cerr << "fhvae: usage error: " << one_line(e.what()) << '\n';
		return kExitUsage;
	} catch (const std::exception& e) {
		std::cerr << "fhvae: error: " << one_line(e.what()) << '\n';
		return kExitFailure;
	}
	return kExitFailure;
}
