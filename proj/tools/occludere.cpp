// occludere: command-line driver for toy data generation, occlusion synthesis,
// the three training stages, evaluation, ablation grids and t-SNE maps.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "occludere/checkpoint.hpp"
#include "occludere/config.hpp"
#include "occludere/eval.hpp"
#include "occludere/synth.hpp"
#include "occludere/toyface.hpp"
#include "occludere/train.hpp"
#include "occludere/tsne.hpp"

namespace fs = std::filesystem;
using namespace occludere;

namespace {

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;  // section.key=value
    bool no_env = false;

    void attach(CLI::App* cmd, bool required = false) {
        auto* opt = cmd->add_option("--config", path, "INI run configuration");
        if (required) opt->required();
        cmd->add_option("--set", overrides, "Override one config value, as section.key=value (repeatable)");
        cmd->add_flag("--no-env", no_env, "Ignore OCCLUDERE_<SECTION>_<KEY> environment overrides");
    }

    RunConfig load() const {
        RunConfig cfg = path.empty() ? parse_config("", fs::current_path(), !no_env, "<defaults>")
                                     : load_config(path, !no_env);
        for (const auto& item : overrides) {
            const auto eq = item.find('='), dot = item.find('.');
            require(eq != std::string::npos && dot != std::string::npos && dot < eq, ErrorKind::config,
                    "--set expects section.key=value, got '" + item + "'");
            set_config_value(cfg, item.substr(0, dot), item.substr(dot + 1, eq - dot - 1), item.substr(eq + 1));
        }
        cfg.validate();
        return cfg;
    }
};

/// Every run records the resolved configuration and its hash.
void log_config(const std::string& verb, const RunConfig& cfg) {
    std::cerr << "# occludere " << verb << " config_hash=" << config_hash(cfg) << "\n";
    std::istringstream ini(to_ini(cfg));
    for (std::string line; std::getline(ini, line);)
        if (!line.empty()) std::cerr << "#   " << line << "\n";
}

template <class F>
decltype(auto) with_precision(const std::string& precision, F&& f) {
    if (precision == "float") return f(std::type_identity<float>{});
    return f(std::type_identity<double>{});
}

fs::path required_path(const RunConfig& cfg, const std::string& value, const char* key) {
    require(!value.empty(), ErrorKind::config, std::string("[paths] ") + key + " is not set");
    return cfg.resolve(value);
}

/// Training log sink: paths.log when set, stderr otherwise.
class LogSink {
public:
    explicit LogSink(const RunConfig& cfg) {
        if (!cfg.paths.log.empty()) {
            const auto p = cfg.resolve(cfg.paths.log);
            if (p.has_parent_path()) fs::create_directories(p.parent_path());
            file_ = std::make_unique<std::ofstream>(p, std::ios::trunc);
            require(file_->good(), ErrorKind::io, "cannot open log " + p.string());
            *file_ << to_ini(cfg) << "config_hash=" << config_hash(cfg) << "\n";
        }
    }
    std::ostream* get() { return file_ ? static_cast<std::ostream*>(file_.get()) : &std::cerr; }

private:
    std::unique_ptr<std::ofstream> file_;
};

std::array<double, 2> to_range(const std::vector<double>& v, const char* what) {
    require(v.size() == 2, ErrorKind::config, std::string(what) + " range needs two values");
    return {v[0], v[1]};
}

ExtractOptions extract_options(const RunConfig& cfg) {
    ExtractOptions ex;
    ex.cluster = cfg.occlusion.cluster;
    ex.margin_mm = cfg.occlusion.margin_mm;
    ex.despeckle = cfg.occlusion.despeckle;
    return ex;
}

template <class T>
TrainSession<T> run_stage3(const RunConfig& cfg, std::ostream* log) {
    const auto occluded = load_manifest(required_path(cfg, cfg.paths.occluded_manifest, "occluded_manifest"), cfg.net.bins);
    const auto store = read_latent_store(required_path(cfg, cfg.paths.latent_store, "latent_store"));
    const auto init = read_checkpoint(required_path(cfg, cfg.paths.init_checkpoint, "init_checkpoint"));
    std::optional<DatasetManifest> clean;
    if (cfg.train.mix_clean > 0.0)
        clean = load_manifest(required_path(cfg, cfg.paths.clean_manifest, "clean_manifest"), cfg.net.bins);
    return stage3_train<T>(cfg, occluded, store, init, log, clean ? &*clean : nullptr);
}

int save_session_checkpoint(const RunConfig& cfg, Checkpoint ck) {
    const auto path = required_path(cfg, cfg.paths.checkpoint, "checkpoint");
    const auto id = write_checkpoint(path, ck);
    std::cout << "checkpoint " << path.string() << " id=" << id << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Head pose estimation under occlusion: toy data, synthesis, training, evaluation"};
    app.require_subcommand(1);
    app.allow_extras(false);

    ConfigArgs cfg_args;

    // toyface ---------------------------------------------------------------
    auto* toyface = app.add_subcommand("toyface", "Synthetic head renders and RGB-D occluder sequences");
    toyface->require_subcommand(1);

    auto* gen = toyface->add_subcommand("gen", "Render a labelled toy face dataset");
    std::size_t gen_n = 0;
    std::string gen_out, gen_prefix = "toy", gen_split = "train";
    std::uint64_t gen_seed = 0;
    std::vector<double> gen_yaw{-75, 75}, gen_pitch{-40, 40}, gen_roll{-40, 40};
    RenderSpec gen_spec;
    bool gen_symmetric = false;
    gen->add_option("--n", gen_n, "Number of images")->required();
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
    gen->add_option("--yaw", gen_yaw, "Yaw range lo hi (degrees)")->expected(2)->delimiter(',')->capture_default_str();
    gen->add_option("--pitch", gen_pitch, "Pitch range lo hi")->expected(2)->delimiter(',')->capture_default_str();
    gen->add_option("--roll", gen_roll, "Roll range lo hi")->expected(2)->delimiter(',')->capture_default_str();
    gen->add_option("--size", gen_spec.size, "Image side in pixels")->capture_default_str();
    gen->add_option("--noise", gen_spec.noise, "Background noise amplitude")->capture_default_str();
    gen->add_option("--prefix", gen_prefix, "Record id prefix")->capture_default_str();
    gen->add_option("--split", gen_split, "Split name written to the manifest")->capture_default_str();
    gen->add_flag("--symmetric", gen_symmetric, "Left-right symmetric heads");
    cfg_args.attach(gen);

    auto* rgbd = toyface->add_subcommand("rgbd", "Render an RGB-D sequence of a head behind moving occluders");
    std::string rgbd_out;
    std::uint64_t rgbd_seed = 0;
    RgbdSpec rgbd_spec;
    rgbd->add_option("--out", rgbd_out, "Output directory")->required();
    rgbd->add_option("--seed", rgbd_seed, "Generator seed")->capture_default_str();
    rgbd->add_option("--frames", rgbd_spec.frames, "Frame count; the first frame is unoccluded")->capture_default_str();
    cfg_args.attach(rgbd);

    // synth -----------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Occluder extraction and compositing");
    synth->require_subcommand(1);

    auto* extract = synth->add_subcommand("extract", "Extract occluder assets from an RGB-D sequence");
    std::string ex_rgbd, ex_boxes, ex_out;
    extract->add_option("--rgbd", ex_rgbd, "Sequence directory holding frames.txt")->required();
    extract->add_option("--boxes", ex_boxes, "Face boxes CSV (default: <rgbd>/boxes.csv)");
    extract->add_option("--out", ex_out, "Asset archive directory")->required();
    cfg_args.attach(extract);

    auto* apply = synth->add_subcommand("apply", "Composite occluders onto a manifest");
    std::string ap_manifest, ap_assets, ap_out, ap_split = "occluded";
    std::vector<int> ap_levels{1, 2, 3, 4, 5, 6};
    std::uint64_t ap_seed = 0;
    apply->add_option("--manifest", ap_manifest, "Input manifest")->required();
    apply->add_option("--assets", ap_assets, "Asset archive directory")->required();
    apply->add_option("--level", ap_levels, "Severity level(s) 1-6, comma separated")->delimiter(',')->capture_default_str();
    apply->add_option("--seed", ap_seed, "Placement seed")->capture_default_str();
    apply->add_option("--out", ap_out, "Output directory")->required();
    apply->add_option("--split", ap_split, "Split name of the occluded records")->capture_default_str();
    cfg_args.attach(apply);

    // train -----------------------------------------------------------------
    auto* train = app.add_subcommand("train", "Training stages");
    train->require_subcommand(1);
    auto* stage1 = train->add_subcommand("stage1", "Train on clean images from scratch");
    auto* stage3 = train->add_subcommand("stage3", "Fine-tune on occluded images against stored latents");
    cfg_args.attach(stage1, true);
    ConfigArgs cfg_args3;
    cfg_args3.attach(stage3, true);

    // latents ---------------------------------------------------------------
    auto* latents = app.add_subcommand("latents", "Latent embedding stores");
    latents->require_subcommand(1);
    auto* lat_extract = latents->add_subcommand("extract", "Embed every record of a manifest");
    std::string lx_ckpt, lx_manifest, lx_out;
    lat_extract->add_option("--checkpoint", lx_ckpt, "Model checkpoint")->required();
    lat_extract->add_option("--manifest", lx_manifest, "Manifest to embed")->required();
    lat_extract->add_option("--out", lx_out, "Latent store file")->required();

    // eval ------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "Angle errors of a checkpoint on a manifest");
    std::string ev_ckpt, ev_manifest, ev_out;
    eval->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
    eval->add_option("--manifest", ev_manifest, "Test manifest")->required();
    eval->add_option("--out", ev_out, "Report directory")->required();

    // ablate ----------------------------------------------------------------
    auto* ablate = app.add_subcommand("ablate", "Train and evaluate one model per parameter value");
    std::string ab_param, ab_out, ab_occ_test, ab_clean_test, ab_stage = "3";
    std::vector<std::string> ab_values;
    ConfigArgs cfg_args_ab;
    ablate->add_option("--param", ab_param, "Parameter as section.key or a [train] key")->required();
    ablate->add_option("--values", ab_values, "Comma-separated values")->required()->delimiter(',');
    ablate->add_option("--occluded-test", ab_occ_test, "Occluded test manifest")->required();
    ablate->add_option("--clean-test", ab_clean_test, "Clean test manifest")->required();
    ablate->add_option("--stage", ab_stage, "3: fine-tune from paths.init_checkpoint; full: stage1, latents, stage3")
        ->check(CLI::IsMember({"3", "full"}))
        ->capture_default_str();
    ablate->add_option("--out", ab_out, "Report path stem (writes <stem>.csv and <stem>.txt)")->required();
    cfg_args_ab.attach(ablate, true);

    // tsne ------------------------------------------------------------------
    auto* tsne_cmd = app.add_subcommand("tsne", "2-D t-SNE map of latent embeddings");
    std::string ts_manifest, ts_latents, ts_ckpt, ts_out, ts_angle = "yaw";
    double ts_width = 20.0;
    TsneConfig ts_cfg;
    tsne_cmd->add_option("--manifest", ts_manifest, "Manifest providing ids and pose labels")->required();
    auto* ts_lat_opt = tsne_cmd->add_option("--latents", ts_latents, "Latent store");
    auto* ts_ck_opt = tsne_cmd->add_option("--checkpoint", ts_ckpt, "Checkpoint to embed the manifest with");
    ts_lat_opt->excludes(ts_ck_opt);
    tsne_cmd->add_option("--angle", ts_angle, "Label angle")->check(CLI::IsMember({"yaw", "pitch", "roll"}))->capture_default_str();
    tsne_cmd->add_option("--bin-width", ts_width, "Label interval width in degrees")->capture_default_str();
    tsne_cmd->add_option("--perplexity", ts_cfg.perplexity, "Target perplexity")->capture_default_str();
    tsne_cmd->add_option("--iterations", ts_cfg.iterations, "Gradient steps")->capture_default_str();
    tsne_cmd->add_option("--seed", ts_cfg.seed, "Initial layout seed")->capture_default_str();
    tsne_cmd->add_option("--out", ts_out, "Output directory (map.csv, map.gp)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            const auto cfg = cfg_args.load();
            log_config("toyface gen", cfg);
            PoseRanges ranges;
            ranges.yaw = to_range(gen_yaw, "yaw");
            ranges.pitch = to_range(gen_pitch, "pitch");
            ranges.roll = to_range(gen_roll, "roll");
            ToyDatasetOptions opt;
            opt.id_prefix = gen_prefix;
            opt.split = gen_split;
            opt.symmetric = gen_symmetric;
            const auto m = generate_dataset(gen_n, ranges, gen_spec, gen_seed, gen_out, opt, cfg.net.bins);
            std::cout << "wrote " << m.size() << " records to " << (fs::path(gen_out) / "manifest.csv").string() << "\n";
        } else if (*rgbd) {
            const auto cfg = cfg_args.load();
            log_config("toyface rgbd", cfg);
            const auto seq = generate_rgbd_sequence(rgbd_out, rgbd_spec, rgbd_seed);
            std::cout << "wrote " << seq.frames.size() << " frames to " << rgbd_out << "\n";
        } else if (*extract) {
            const auto cfg = cfg_args.load();
            log_config("synth extract", cfg);
            const fs::path boxes = ex_boxes.empty() ? fs::path(ex_rgbd) / "boxes.csv" : fs::path(ex_boxes);
            const auto res = extract_sequence(ex_rgbd, read_boxes(boxes), extract_options(cfg));
            write_asset_archive(ex_out, res.assets);
            std::cout << "threshold_mm=" << res.threshold_mm << " assets=" << res.assets.size()
                      << " empty_frames=" << res.empty_frames << "\n";
        } else if (*apply) {
            const auto cfg = cfg_args.load();
            log_config("synth apply", cfg);
            const auto manifest = load_manifest(ap_manifest, cfg.net.bins);
            SeverityOptions opt;
            opt.scales = cfg.occlusion.scales;
            opt.opacity = cfg.occlusion.opacity;
            opt.split = ap_split;
            const auto res = apply_occlusions(manifest, read_asset_archive(ap_assets), ap_levels, ap_seed, ap_out, opt);
            std::cout << "wrote " << res.manifest.size() << " records, missed=" << res.missed << " mean_occlusion="
                      << format_fixed(mean_occlusion_percentage(res.manifest), 3) << "\n";
        } else if (*stage1) {
            const auto cfg = cfg_args.load();
            log_config("train stage1", cfg);
            LogSink log(cfg);
            const auto clean = load_manifest(required_path(cfg, cfg.paths.clean_manifest, "clean_manifest"), cfg.net.bins);
            return with_precision(cfg.train.precision, [&]<class T>(std::type_identity<T>) {
                return save_session_checkpoint(cfg, stage1_train<T>(cfg, clean, log.get()).checkpoint(cfg));
            });
        } else if (*stage3) {
            const auto cfg = cfg_args3.load();
            log_config("train stage3", cfg);
            LogSink log(cfg);
            return with_precision(cfg.train.precision, [&]<class T>(std::type_identity<T>) {
                return save_session_checkpoint(cfg, run_stage3<T>(cfg, log.get()).checkpoint(cfg));
            });
        } else if (*lat_extract) {
            const auto ck = read_checkpoint(lx_ckpt);
            log_config("latents extract", ck.config);
            const auto manifest = load_manifest(lx_manifest, ck.config.net.bins);
            const auto store = with_precision(ck.config.train.precision, [&]<class T>(std::type_identity<T>) {
                return extract_latents(restore_net<T>(ck), ck.normalization, manifest, ck.id);
            });
            write_latent_store(lx_out, store);
            std::cout << "wrote " << store.size() << " latents of dimension " << store.dim() << " to " << lx_out << "\n";
        } else if (*eval) {
            const auto ck = read_checkpoint(ev_ckpt);
            log_config("eval", ck.config);
            const auto manifest = load_manifest(ev_manifest, ck.config.net.bins);
            require(!manifest.empty(), ErrorKind::contract, "evaluation manifest " + ev_manifest + " is empty");
            const auto preds = with_precision(ck.config.train.precision, [&]<class T>(std::type_identity<T>) {
                return predict_manifest(restore_net<T>(ck), ck.normalization, manifest);
            });
            std::vector<EulerPose> gts;
            for (const auto& r : manifest.records) gts.push_back(r.pose);
            const EvalReport report{mae(preds, gts), manifest.size(), manifest_id(manifest), ck.id};
            write_eval_report(ev_out, report, manifest, preds);
            std::cout << format_eval_report(report);
        } else if (*ablate) {
            const auto base = cfg_args_ab.load();
            log_config("ablate", base);
            const auto dot = ab_param.find('.');
            const std::string section = dot == std::string::npos ? "train" : ab_param.substr(0, dot);
            const std::string key = dot == std::string::npos ? ab_param : ab_param.substr(dot + 1);
            get_config_value(base, section, key);  // rejects unknown parameters before any training
            const auto occ_test = load_manifest(ab_occ_test, base.net.bins);
            const auto clean_test = load_manifest(ab_clean_test, base.net.bins);
            const auto runner = [&](const std::string& value) {
                RunConfig cfg = base;
                set_config_value(cfg, section, key, value);
                cfg.validate();
                std::cerr << "# cell " << section << "." << key << "=" << value << " config_hash=" << config_hash(cfg)
                          << "\n";
                return with_precision(cfg.train.precision, [&]<class T>(std::type_identity<T>) {
                    std::ostringstream sink;
                    TrainSession<T> s;
                    if (ab_stage == "full") {
                        const auto clean =
                            load_manifest(required_path(cfg, cfg.paths.clean_manifest, "clean_manifest"), cfg.net.bins);
                        const auto occluded = load_manifest(
                            required_path(cfg, cfg.paths.occluded_manifest, "occluded_manifest"), cfg.net.bins);
                        auto s1 = stage1_train<T>(cfg, clean, &sink);
                        Checkpoint init = s1.checkpoint(cfg);
                        init.id = checkpoint_id(init);
                        const auto store = extract_latents(s1.net, s1.normalization, clean, init.id);
                        s = stage3_train<T>(cfg, occluded, store, init, &sink, &clean);
                    } else {
                        s = run_stage3<T>(cfg, &sink);
                    }
                    const auto id = checkpoint_id(s.checkpoint(cfg));
                    AblationCell cell;
                    cell.occluded = evaluate(s.net, s.normalization, occ_test, id);
                    cell.clean = evaluate(s.net, s.normalization, clean_test, id);
                    return cell;
                });
            };
            const auto grid = run_ablation(ab_param, ab_values, runner, &std::cerr);
            write_reports(ab_out, grid);
            std::cout << report_table(grid);
        } else if (*tsne_cmd) {
            require(!ts_latents.empty() || !ts_ckpt.empty(), ErrorKind::config, "tsne needs --latents or --checkpoint");
            const auto axis = ts_angle == "yaw" ? 0u : ts_angle == "pitch" ? 1u : 2u;
            BinSpec bins;
            LatentStore store;
            DatasetManifest manifest;
            if (!ts_ckpt.empty()) {
                const auto ck = read_checkpoint(ts_ckpt);
                log_config("tsne", ck.config);
                manifest = load_manifest(ts_manifest, ck.config.net.bins);
                store = with_precision(ck.config.train.precision, [&]<class T>(std::type_identity<T>) {
                    return extract_latents(restore_net<T>(ck), ck.normalization, manifest, ck.id);
                });
            } else {
                const auto cfg = RunConfig{};
                log_config("tsne", cfg);
                manifest = load_manifest(ts_manifest, bins);
                store = read_latent_store(ts_latents);
            }
            std::cerr << "# tsne perplexity=" << format_number(ts_cfg.perplexity) << " iterations=" << ts_cfg.iterations
                      << " seed=" << ts_cfg.seed << "\n";
            std::vector<double> x;
            for (const auto& r : manifest.records) {
                const auto v = store.find(r.id);
                require(v.has_value(), ErrorKind::pairing, "record " + r.id + " has no latent in the store");
                x.insert(x.end(), v->begin(), v->end());
            }
            const auto map = tsne(x, manifest.size(), store.dim(), ts_cfg);
            std::vector<MapRow> rows;
            std::vector<std::string> labels;
            for (std::size_t i = 0; i < manifest.size(); ++i) {
                const auto& r = manifest.records[i];
                rows.push_back({r.id, map.y[2 * i], map.y[2 * i + 1], bin_by_angle(r.pose[axis], ts_width)});
                if (std::find(labels.begin(), labels.end(), rows.back().label) == labels.end())
                    labels.push_back(rows.back().label);
            }
            std::sort(labels.begin(), labels.end(), [&](const std::string& a, const std::string& b) {
                return std::stod(a.substr(1)) < std::stod(b.substr(1));
            });
            fs::create_directories(ts_out);
            write_map_csv(fs::path(ts_out) / "map.csv", rows);
            write_gnuplot_stub(fs::path(ts_out) / "map.gp", fs::path(ts_out) / "map.csv", labels,
                               "t-SNE of latents by " + ts_angle);
            std::cout << "wrote " << rows.size() << " points, final KL=" << format_fixed(map.kl.back().second, 6) << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "occludere: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "occludere: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
