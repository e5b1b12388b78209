// Command-line front end for the layout-and-retouch pipeline. Every
// compute subcommand resolves its configuration as flags > config file >
// defaults, writes artifacts under <out>/<run-id>/ and exits 0 on success,
// 1 on validation errors, 2 on runtime failures, 3 on plugin failures.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lr/lr.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::string run_id;
    bool dry_run = false;
    std::string log_level = "info";
};

struct ConfigFlags {
    std::uint64_t seed = 0;
    int T = 0, lambda1 = 0, lambda2 = 0, blend_start = 0, volume_threshold = 0;
    float tau = 0.0f, guidance = 0.0f;
    std::string profile, special_token, class_word;
    bool no_blend = false, no_early_q = false;

    CLI::Option *seed_o = nullptr, *T_o = nullptr, *l1_o = nullptr,
                *l2_o = nullptr, *bs_o = nullptr, *vt_o = nullptr,
                *tau_o = nullptr, *g_o = nullptr, *prof_o = nullptr,
                *spec_o = nullptr, *cls_o = nullptr;
};

void add_common(CLI::App* sub, CommonOpts& c) {
    sub->add_option("--config", c.config_path, "JSON config file");
    sub->add_option("--out", c.out_dir, "output root directory");
    sub->add_option("--run-id", c.run_id, "run directory name");
    sub->add_flag("--dry-run", c.dry_run,
                  "print the resolved config and schedule, then exit");
    sub->add_option("--log-level", c.log_level, "debug|info|warn|error");
}

void add_config_flags(CLI::App* sub, ConfigFlags& f) {
    f.seed_o = sub->add_option("--seed", f.seed, "master seed");
    f.T_o = sub->add_option("--steps", f.T, "sampling steps T");
    f.l1_o = sub->add_option("--lambda1", f.lambda1,
                             "vanilla iterations at the start of stage 1");
    f.l2_o = sub->add_option("--lambda2", f.lambda2,
                             "timestep bound for the reference K/V branch");
    f.bs_o = sub->add_option("--blend-start", f.blend_start,
                             "first iteration with mask blending");
    f.vt_o = sub->add_option("--volume-threshold", f.volume_threshold,
                             "component volume cutoff for mask cleanup");
    f.tau_o = sub->add_option("--tau", f.tau,
                              "cross-attention binarization threshold");
    f.g_o = sub->add_option("--guidance", f.guidance, "guidance scale");
    f.prof_o = sub->add_option("--profile", f.profile, "normal|challenging");
    f.spec_o = sub->add_option("--special-token", f.special_token,
                               "personalization token");
    f.cls_o = sub->add_option("--class-word", f.class_word,
                              "class word replacing the special token");
    sub->add_flag("--no-blend", f.no_blend, "disable mask blending");
    sub->add_flag("--no-early-q", f.no_early_q,
                  "keep the target's own self-attention queries in the "
                  "early branch");
}

lr::PipelineConfig resolve_config(const CommonOpts& c, const ConfigFlags& f) {
    lr::PipelineConfig cfg = lr::load_config(c.config_path);
    if (f.prof_o->count()) {
        cfg.profile = f.profile;
        if (f.profile == "challenging" && !f.l1_o->count()) cfg.lambda1 = 3;
    }
    if (f.seed_o->count()) cfg.seed = f.seed;
    if (f.T_o->count()) cfg.T = f.T;
    if (f.l1_o->count()) cfg.lambda1 = f.lambda1;
    if (f.l2_o->count()) cfg.lambda2 = f.lambda2;
    if (f.bs_o->count()) cfg.blend_start = f.blend_start;
    if (f.vt_o->count()) cfg.volume_threshold = f.volume_threshold;
    if (f.tau_o->count()) cfg.ca_threshold = f.tau;
    if (f.g_o->count()) cfg.guidance_scale = f.guidance;
    if (f.spec_o->count()) cfg.special_token = f.special_token;
    if (f.cls_o->count()) cfg.class_word = f.class_word;
    if (f.no_blend) cfg.blend_enabled = false;
    if (f.no_early_q) cfg.early_self_q_swap = false;
    cfg.validate();
    return cfg;
}

void apply_log_level(const std::string& level) {
    if (level == "debug") lr::log_level() = lr::LogLevel::debug;
    else if (level == "info") lr::log_level() = lr::LogLevel::info;
    else if (level == "warn") lr::log_level() = lr::LogLevel::warn;
    else if (level == "error") lr::log_level() = lr::LogLevel::error;
    else throw lr::validation_error("unknown log level '" + level + "'");
}

std::filesystem::path make_run_dir(const CommonOpts& c,
                                   const std::string& default_id) {
    const std::string id = c.run_id.empty() ? default_id : c.run_id;
    return std::filesystem::path(c.out_dir) / id;
}

// The per-iteration plan: stage-1 backend choice, stage-2 branch, blend
// window membership.
void print_schedule(const lr::PipelineConfig& cfg) {
    lr::SwapPolicy policy;
    policy.T = cfg.T;
    policy.lambda2 = cfg.lambda2;
    policy.blend_start = cfg.blend_start;
    std::printf("%4s %9s %14s %16s %6s\n", "s", "timestep", "stage1-model",
                "stage2-branch", "blend");
    for (int s = 1; s <= cfg.T; ++s) {
        const bool blend = cfg.blend_enabled && lr::blend_gate(policy, s);
        std::printf("%4d %9d %14s %16s %6s\n", s, cfg.T - s + 1,
                    s <= cfg.lambda1 ? "vanilla" : "personalized",
                    lr::to_string(lr::branch_for(policy, s)),
                    blend ? "on" : "off");
    }
}

bool handle_dry_run(const CommonOpts& c, const lr::PipelineConfig& cfg,
                    bool with_schedule) {
    if (!c.dry_run) return false;
    std::cout << lr::config_to_json(cfg).dump(2) << "\n";
    if (with_schedule) print_schedule(cfg);
    return true;
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw lr::validation_error(std::string(what) +
                                       ": not an integer: '" + item + "'");
        }
    }
    if (out.empty())
        throw lr::validation_error(std::string(what) + ": empty list");
    return out;
}

lr::Image load_image_checked(const std::string& path,
                             const lr::PipelineConfig& cfg) {
    lr::Image img = lr::load_ppm(path);
    if (img.height() != cfg.image_size[0] || img.width() != cfg.image_size[1])
        throw lr::validation_error(
            path + ": image is " + std::to_string(img.height()) + "x" +
            std::to_string(img.width()) + ", config expects " +
            std::to_string(cfg.image_size[0]) + "x" +
            std::to_string(cfg.image_size[1]));
    return img;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw lr::io_error("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_layout(const CommonOpts& c, const ConfigFlags& f,
               const std::string& prompt) {
    lr::PipelineConfig cfg = resolve_config(c, f);
    if (handle_dry_run(c, cfg, true)) return 0;
    lr::ToyRig rig(cfg);
    const auto dir = make_run_dir(c, "layout-seed" + std::to_string(cfg.seed));
    lr::RunWriter writer(dir);
    lr::RunRecord rec;
    rec.set_config(cfg);
    const lr::ConditionSet conds =
        lr::derive_conditions(rig.encoder, prompt, cfg.class_word);
    lr::generate_layout(rig.vanilla(), rig.personalized(), conds, rig.uncond(),
                        cfg, rig.codec, &rec, &writer);
    rec.finalize(dir);
    std::cout << "layout run: " << dir.string() << "\n";
    return 0;
}

int cmd_retouch(const CommonOpts& c, const ConfigFlags& f,
                const std::string& prompt, const std::string& layout_path,
                const std::string& reference_path,
                const std::string& sam_path) {
    lr::PipelineConfig cfg = resolve_config(c, f);
    if (handle_dry_run(c, cfg, true)) return 0;
    lr::ToyRig rig(cfg);
    const lr::Image layout = load_image_checked(layout_path, cfg);
    const lr::Image reference = load_image_checked(reference_path, cfg);
    lr::BlendMask m_sam;
    if (!sam_path.empty()) {
        m_sam.data = lr::load_pgm(sam_path);
        m_sam.provenance = lr::MaskProvenance::segmenter;
        lr::require_binary(m_sam.data, "retouch --sam-mask");
    } else {
        m_sam = rig.hub.segment(layout);
    }
    const auto dir = make_run_dir(c, "retouch-seed" + std::to_string(cfg.seed));
    lr::RunWriter writer(dir);
    lr::RunRecord rec;
    rec.set_config(cfg);
    const lr::ConditionSet conds =
        lr::derive_conditions(rig.encoder, prompt, cfg.class_word);
    lr::retouch(layout, reference, rig.personalized(), conds, rig.uncond(),
                m_sam, cfg, rig.codec, &rec, &writer);
    rec.finalize(dir);
    std::cout << "retouch run: " << dir.string() << "\n";
    return 0;
}

int cmd_generate(const CommonOpts& c, const ConfigFlags& f,
                 const std::string& prompt, const std::string& reference_path) {
    lr::PipelineConfig cfg = resolve_config(c, f);
    if (handle_dry_run(c, cfg, true)) return 0;
    lr::ToyRig rig(cfg);
    const lr::Image reference = load_image_checked(reference_path, cfg);
    const auto dir =
        make_run_dir(c, "generate-seed" + std::to_string(cfg.seed));
    lr::RunWriter writer(dir);
    lr::RunRecord rec;
    rec.set_config(cfg);
    lr::generate(prompt, reference, rig, &rec, &writer);
    rec.finalize(dir);
    std::cout << "generate run: " << dir.string() << "\n";
    std::cout << "target fingerprint: "
              << rec.doc["latents"]["target_z0"]["fingerprint"]
                     .get<std::string>()
              << "\n";
    return 0;
}

int cmd_mask_debug(const CommonOpts& c, const ConfigFlags& f,
                   const std::string& prompt, const std::string& layout_path) {
    lr::PipelineConfig cfg = resolve_config(c, f);
    if (handle_dry_run(c, cfg, true)) return 0;
    lr::ToyRig rig(cfg);
    const lr::Image layout = load_image_checked(layout_path, cfg);
    const lr::ConditionSet conds =
        lr::derive_conditions(rig.encoder, prompt, cfg.class_word);
    const lr::MaskDebugResult masks = lr::mask_debug(
        layout, rig.personalized(), conds, rig.uncond(), rig.hub, cfg,
        rig.codec);
    const auto dir =
        make_run_dir(c, "mask-debug-seed" + std::to_string(cfg.seed));
    lr::RunWriter writer(dir);
    lr::RunRecord rec;
    rec.set_config(cfg);
    rec.add_mask("m_c", writer.save_mask("m_c", masks.m_c));
    rec.add_mask("m_sam", writer.save_mask("m_sam", masks.m_sam));
    rec.add_mask("m_k", writer.save_mask("m_k", masks.m_k));
    rec.add_mask("m", writer.save_mask("m", masks.m));
    rec.finalize(dir);
    std::cout << "mask-debug run: " << dir.string() << "\n";
    return 0;
}

int cmd_eval_centers(const CommonOpts& c, const ConfigFlags& f,
                     const std::vector<std::string>& mask_paths,
                     std::size_t density_res, double sigma) {
    lr::PipelineConfig cfg = resolve_config(c, f);
    if (handle_dry_run(c, cfg, false)) return 0;
    std::vector<lr::Tensor> masks;
    masks.reserve(mask_paths.size());
    for (const auto& p : mask_paths) masks.push_back(lr::load_pgm(p));
    const lr::CenterStats stats =
        lr::center_point_stats_from_masks(masks, density_res, sigma);
    const auto dir = make_run_dir(c, "eval-centers");
    std::filesystem::create_directories(dir);
    // Scale the density map to full range for viewing.
    lr::Tensor view = stats.density;
    const float peak = lr::max_abs(view);
    if (peak > 0.0f)
        for (float& v : view.values()) v /= peak;
    lr::save_pgm(view, (dir / "density.pgm").string());
    nlohmann::json j = lr::center_stats_json(stats, "density.pgm");
    write_json(dir / "stats.json", j);
    std::printf("n=%zu sigma2_avg=%.9f\n", stats.centers.size(),
                stats.sigma2_avg);
    std::cout << "eval-centers run: " << dir.string() << "\n";
    return 0;
}

int cmd_eval_diversity(const CommonOpts& c, const ConfigFlags& f,
                       const std::vector<std::string>& image_paths) {
    lr::PipelineConfig cfg = resolve_config(c, f);
    if (handle_dry_run(c, cfg, false)) return 0;
    lr::PluginHub hub = lr::PluginHub::from_env(cfg.stub_seed());
    std::vector<lr::Image> images;
    images.reserve(image_paths.size());
    for (const auto& p : image_paths) images.push_back(lr::load_ppm(p));
    const double is = lr::inception_score(images, hub);
    const auto dir = make_run_dir(c, "eval-diversity");
    std::filesystem::create_directories(dir);
    write_json(dir / "stats.json",
               {{"n", images.size()}, {"inception_score", is}});
    std::printf("n=%zu inception_score=%.9f\n", images.size(), is);
    return 0;
}

int cmd_eval_identity(const CommonOpts& c, const ConfigFlags& f,
                      const std::vector<std::string>& generated_paths,
                      const std::vector<std::string>& reference_paths,
                      const std::string& prompt,
                      const std::string& export_path) {
    lr::PipelineConfig cfg = resolve_config(c, f);
    if (handle_dry_run(c, cfg, false)) return 0;
    lr::PluginHub hub = lr::PluginHub::from_env(cfg.stub_seed());
    std::vector<lr::Image> generated, refs;
    for (const auto& p : generated_paths) generated.push_back(lr::load_ppm(p));
    for (const auto& p : reference_paths) refs.push_back(lr::load_ppm(p));

    std::vector<lr::Tensor> gen_emb, ref_emb;
    for (const auto& img : generated) gen_emb.push_back(hub.embed_image(img));
    for (const auto& img : refs) ref_emb.push_back(hub.embed_image(img));
    const double identity =
        lr::identity_score_from_embeddings(gen_emb, ref_emb);

    nlohmann::json j{{"n_generated", generated.size()},
                     {"n_reference", refs.size()},
                     {"identity_score", identity}};
    std::printf("identity_score=%.9f\n", identity);
    if (!prompt.empty()) {
        const double fid = lr::fidelity_score(generated, prompt, hub);
        j["fidelity_score"] = fid;
        std::printf("fidelity_score=%.9f\n", fid);
    }
    if (!export_path.empty()) {
        std::vector<lr::Tensor> all = gen_emb;
        all.insert(all.end(), ref_emb.begin(), ref_emb.end());
        lr::save_tensor(lr::stack_embeddings(all), export_path);
        j["embeddings"] = export_path;
    }
    const auto dir = make_run_dir(c, "eval-identity");
    std::filesystem::create_directories(dir);
    write_json(dir / "stats.json", j);
    return 0;
}

int cmd_sweep_lambda1(const CommonOpts& c, const ConfigFlags& f,
                      const std::string& prompt,
                      const std::string& reference_path,
                      const std::string& values_text,
                      const std::string& seeds_text) {
    lr::PipelineConfig base = resolve_config(c, f);
    if (handle_dry_run(c, base, false)) return 0;
    const std::vector<int> values = parse_int_list(values_text, "--values");
    const std::vector<int> seeds = parse_int_list(seeds_text, "--seeds");

    const auto dir = make_run_dir(c, "sweep-lambda1");
    std::filesystem::create_directories(dir);
    nlohmann::json rows = nlohmann::json::array();

    std::printf("%8s %6s %15s %15s %15s %15s\n", "lambda1", "runs", "identity",
                "fidelity", "sigma2_avg", "incep_score");
    for (int l1 : values) {
        lr::PipelineConfig cfg = base;
        cfg.lambda1 = l1;
        cfg.validate();

        std::vector<lr::Image> targets;
        std::vector<std::array<double, 2>> centers;
        bool centers_ok = true;
        lr::Image reference;
        lr::PluginHub hub = lr::PluginHub::from_env(cfg.stub_seed());
        for (int seed : seeds) {
            cfg.seed = static_cast<std::uint64_t>(seed);
            lr::ToyRig rig(cfg);
            if (targets.empty())
                reference = load_image_checked(reference_path, cfg);
            const auto run_dir = dir / ("l1-" + std::to_string(l1) +
                                        "-seed-" + std::to_string(seed));
            lr::RunWriter writer(run_dir);
            lr::RunRecord rec;
            rec.set_config(cfg);
            const lr::GenerateResult res =
                lr::generate(prompt, reference, rig, &rec, &writer);
            rec.finalize(run_dir);
            targets.push_back(res.retouch.image);
            try {
                lr::BlendMask m = rig.hub.segment(res.retouch.image);
                centers.push_back(lr::subject_center(m.data));
            } catch (const lr::validation_error&) {
                centers_ok = false;
            }
        }

        const double identity = lr::identity_score(targets, {reference}, hub);
        const double fidelity = lr::fidelity_score(targets, prompt, hub);
        std::optional<double> sigma2, is;
        if (targets.size() >= 2) {
            if (centers_ok && centers.size() == targets.size())
                sigma2 = lr::center_point_stats(centers).sigma2_avg;
            is = lr::inception_score(targets, hub);
        }

        nlohmann::json row{{"lambda1", l1},
                           {"runs", targets.size()},
                           {"identity_score", identity},
                           {"fidelity_score", fidelity}};
        if (sigma2) row["sigma2_avg"] = *sigma2;
        if (is) row["inception_score"] = *is;
        rows.push_back(row);

        char s2buf[32], isbuf[32];
        if (sigma2)
            std::snprintf(s2buf, sizeof s2buf, "%15.9f", *sigma2);
        else
            std::snprintf(s2buf, sizeof s2buf, "%15s", "-");
        if (is)
            std::snprintf(isbuf, sizeof isbuf, "%15.9f", *is);
        else
            std::snprintf(isbuf, sizeof isbuf, "%15s", "-");
        std::printf("%8d %6zu %15.9f %15.9f %s %s\n", l1, targets.size(),
                    identity, fidelity, s2buf, isbuf);
    }
    write_json(dir / "sweep.json", {{"prompt", prompt}, {"rows", rows}});
    std::cout << "sweep run: " << dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layout-and-retouch personalized image pipeline"};
    app.require_subcommand(1);

    CommonOpts common;
    // Option-presence pointers are per subcommand, so each one needs its own
    // flag set; the map keeps node addresses stable for the value bindings.
    std::map<CLI::App*, ConfigFlags> flag_sets;
    std::string prompt, layout_path, reference_path, sam_path;
    std::string values_text = "0,3,5,10", seeds_text = "0";
    std::string export_path;
    std::vector<std::string> mask_paths, image_paths, generated_paths,
        reference_paths;
    std::size_t density_res = 64;
    double sigma = 0.05;

    auto* layout = app.add_subcommand("layout", "stage 1 only");
    add_common(layout, common);
    add_config_flags(layout, flag_sets[layout]);
    layout->add_option("--prompt", prompt, "text prompt")->required();

    auto* retouch = app.add_subcommand("retouch", "stage 2 only");
    add_common(retouch, common);
    add_config_flags(retouch, flag_sets[retouch]);
    retouch->add_option("--prompt", prompt, "text prompt")->required();
    retouch->add_option("--layout", layout_path, "layout image (PPM)")
        ->required();
    retouch->add_option("--reference", reference_path, "reference image (PPM)")
        ->required();
    retouch->add_option("--sam-mask", sam_path,
                        "precomputed segmenter mask (PGM); default runs the "
                        "configured segmenter");

    auto* generate = app.add_subcommand("generate", "both stages");
    add_common(generate, common);
    add_config_flags(generate, flag_sets[generate]);
    generate->add_option("--prompt", prompt, "text prompt")->required();
    generate->add_option("--reference", reference_path,
                         "reference image (PPM)")
        ->required();

    auto* maskdbg = app.add_subcommand("mask-debug",
                                       "emit every mask stage for a layout "
                                       "image");
    add_common(maskdbg, common);
    add_config_flags(maskdbg, flag_sets[maskdbg]);
    maskdbg->add_option("--prompt", prompt, "text prompt")->required();
    maskdbg->add_option("--layout", layout_path, "layout image (PPM)")
        ->required();

    auto* centers = app.add_subcommand("eval-centers",
                                       "subject-center spread over masks");
    add_common(centers, common);
    add_config_flags(centers, flag_sets[centers]);
    centers->add_option("masks", mask_paths, "binary PGM masks")
        ->required()
        ->expected(-1);
    centers->add_option("--density-res", density_res,
                        "density map resolution");
    centers->add_option("--sigma", sigma, "density kernel width");

    auto* diversity = app.add_subcommand("eval-diversity",
                                         "inception score over images");
    add_common(diversity, common);
    add_config_flags(diversity, flag_sets[diversity]);
    diversity->add_option("images", image_paths, "PPM images")
        ->required()
        ->expected(-1);

    auto* identity = app.add_subcommand("eval-identity",
                                        "embedding similarity scores");
    add_common(identity, common);
    add_config_flags(identity, flag_sets[identity]);
    identity->add_option("--generated", generated_paths, "generated images")
        ->required();
    identity->add_option("--reference", reference_paths, "reference images")
        ->required();
    identity->add_option("--prompt", prompt,
                         "also score text fidelity against this prompt");
    identity->add_option("--export-embeddings", export_path,
                         "write stacked embeddings to this container file");

    auto* sweep = app.add_subcommand("sweep-lambda1",
                                     "metric table over lambda1 values");
    add_common(sweep, common);
    add_config_flags(sweep, flag_sets[sweep]);
    sweep->add_option("--prompt", prompt, "text prompt")->required();
    sweep->add_option("--reference", reference_path, "reference image (PPM)")
        ->required();
    sweep->add_option("--values", values_text, "comma-separated lambda1 list");
    sweep->add_option("--seeds", seeds_text, "comma-separated seed list");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        apply_log_level(common.log_level);
        if (layout->parsed()) return cmd_layout(common, flag_sets[layout], prompt);
        if (retouch->parsed())
            return cmd_retouch(common, flag_sets[retouch], prompt,
                               layout_path, reference_path, sam_path);
        if (generate->parsed())
            return cmd_generate(common, flag_sets[generate], prompt,
                                reference_path);
        if (maskdbg->parsed())
            return cmd_mask_debug(common, flag_sets[maskdbg], prompt,
                                  layout_path);
        if (centers->parsed())
            return cmd_eval_centers(common, flag_sets[centers], mask_paths,
                                    density_res, sigma);
        if (diversity->parsed())
            return cmd_eval_diversity(common, flag_sets[diversity],
                                      image_paths);
        if (identity->parsed())
            return cmd_eval_identity(common, flag_sets[identity],
                                     generated_paths, reference_paths, prompt,
                                     export_path);
        if (sweep->parsed())
            return cmd_sweep_lambda1(common, flag_sets[sweep], prompt,
                                     reference_path, values_text, seeds_text);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const lr::plugin_error& e) {
        std::cerr << "plugin error: " << e.what() << "\n";
        return 3;
    } catch (const lr::validation_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const lr::format_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const lr::error& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}
