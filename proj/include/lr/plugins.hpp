#pragma once

#include <array>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include "lr/errors.hpp"
#include "lr/image.hpp"
#include "lr/log.hpp"
#include "lr/maskops.hpp"
#include "lr/numeric.hpp"
#include "lr/rng.hpp"
#include "lr/tensor.hpp"

namespace lr {

enum class PluginKind { segmenter, image_embedder, text_embedder, classifier };

inline const char* to_string(PluginKind k) {
    switch (k) {
        case PluginKind::segmenter: return "segmenter";
        case PluginKind::image_embedder: return "image_embedder";
        case PluginKind::text_embedder: return "text_embedder";
        case PluginKind::classifier: return "classifier";
    }
    return "?";
}

enum class PluginTransport { builtin, subprocess, http };

struct PluginEndpoint {
    PluginKind kind = PluginKind::segmenter;
    PluginTransport transport = PluginTransport::builtin;
    std::string address;  // command path (subprocess) or URL (http)
    double timeout_s = 10.0;

    void validate() const {
        if (!(timeout_s > 0.0))
            throw validation_error(std::string(to_string(kind)) +
                                   " plugin: timeout must be > 0");
        if (transport != PluginTransport::builtin && address.empty())
            throw validation_error(std::string(to_string(kind)) +
                                   " plugin: missing address");
    }
};

// "builtin", "subprocess:<command>", or "http://host:port/path".
inline PluginEndpoint parse_endpoint(PluginKind kind, const std::string& text,
                                     double timeout_s) {
    PluginEndpoint ep;
    ep.kind = kind;
    ep.timeout_s = timeout_s;
    if (text.empty() || text == "builtin") {
        ep.transport = PluginTransport::builtin;
    } else if (text.rfind("subprocess:", 0) == 0) {
        ep.transport = PluginTransport::subprocess;
        ep.address = text.substr(std::string("subprocess:").size());
    } else if (text.rfind("http://", 0) == 0) {
        ep.transport = PluginTransport::http;
        ep.address = text;
    } else {
        throw validation_error(std::string(to_string(kind)) +
                               " plugin: unrecognized endpoint '" + text +
                               "' (use builtin, subprocess:<cmd>, or http://...)");
    }
    ep.validate();
    return ep;
}

namespace detail {

inline std::string plugin_temp_path(const char* suffix) {
    static std::atomic<unsigned> counter{0};
    std::ostringstream name;
    name << "lr-plugin-" << ::getpid() << "-" << counter++ << suffix;
    return (std::filesystem::temp_directory_path() / name.str()).string();
}

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Runs `command <input-file>`, expecting the output file path on stdout.
// `label` names the caller in error messages.
inline std::string run_subprocess_exchange(const std::string& label,
                                           const std::string& command,
                                           double timeout_s,
                                           const std::string& input_bytes,
                                           const char* input_suffix) {
    const std::string in_path = plugin_temp_path(input_suffix);
    write_file_bytes(in_path, input_bytes);
    struct Cleanup {
        std::string path;
        ~Cleanup() {
            std::error_code ec;
            std::filesystem::remove(path, ec);
        }
    } cleanup{in_path};

    int out_pipe[2];
    if (::pipe(out_pipe) != 0)
        throw io_error("plugin: cannot create pipe");

    const pid_t pid = ::fork();
    if (pid < 0) {
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        throw io_error("plugin: fork failed");
    }
    if (pid == 0) {
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        ::execl(command.c_str(), command.c_str(), in_path.c_str(),
                static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(out_pipe[1]);

    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration<double>(timeout_s);
    std::string stdout_text;
    bool timed_out = false;
    char buf[4096];
    for (;;) {
        const auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            timed_out = true;
            break;
        }
        const int remaining_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now)
                .count());
        struct pollfd pfd {out_pipe[0], POLLIN, 0};
        const int pr = ::poll(&pfd, 1, std::max(1, remaining_ms));
        if (pr < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (pr == 0) {
            timed_out = true;
            break;
        }
        const ssize_t n = ::read(out_pipe[0], buf, sizeof buf);
        if (n < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (n == 0) break;
        stdout_text.append(buf, static_cast<std::size_t>(n));
    }
    ::close(out_pipe[0]);

    if (timed_out) {
        ::kill(pid, SIGKILL);
        ::waitpid(pid, nullptr, 0);
        throw plugin_error(label + " '" + command + "' timed out after " +
                               std::to_string(timeout_s) + "s",
                           /*retryable=*/true);
    }

    int status = 0;
    // The pipe is at EOF, so the child is done or exiting; enforce the
    // deadline on process exit as well.
    for (;;) {
        const pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid) break;
        if (r < 0 && errno != EINTR)
            throw io_error("plugin: waitpid failed");
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(pid, SIGKILL);
            ::waitpid(pid, nullptr, 0);
            throw plugin_error(label + " '" + command + "' timed out after " +
                                   std::to_string(timeout_s) + "s",
                               /*retryable=*/true);
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw plugin_error(label + " '" + command + "' exited with status " +
                           std::to_string(WIFEXITED(status)
                                              ? WEXITSTATUS(status)
                                              : -1));

    const std::string out_path = trim(stdout_text);
    if (out_path.empty() || !std::filesystem::exists(out_path))
        throw plugin_error(label + " '" + command +
                           "' malformed response: expected an output file "
                           "path on stdout");
    std::string result = read_file_bytes(out_path);
    std::error_code ec;
    std::filesystem::remove(out_path, ec);
    return result;
}

inline std::string run_subprocess_plugin(const PluginEndpoint& ep,
                                         const std::string& input_bytes,
                                         const char* input_suffix) {
    return run_subprocess_exchange(std::string(to_string(ep.kind)) + " plugin",
                                   ep.address, ep.timeout_s, input_bytes,
                                   input_suffix);
}

inline std::string run_http_plugin(const PluginEndpoint& ep,
                                   const std::string& input_bytes) {
    const std::string& url = ep.address;
    const std::size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw validation_error("plugin: bad URL " + url);
    const std::size_t path_pos = url.find('/', scheme_end + 3);
    const std::string base =
        path_pos == std::string::npos ? url : url.substr(0, path_pos);
    const std::string path =
        path_pos == std::string::npos ? "/" : url.substr(path_pos);

    httplib::Client cli(base);
    const auto whole = std::chrono::duration<double>(ep.timeout_s);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(whole);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(
        whole - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());

    auto res = cli.Post(path, input_bytes, "application/octet-stream");
    if (!res)
        throw plugin_error(std::string(to_string(ep.kind)) + " plugin " + url +
                               " unreachable: " + httplib::to_string(res.error()),
                           /*retryable=*/true);
    if (res->status != 200)
        throw plugin_error(std::string(to_string(ep.kind)) + " plugin " + url +
                           " returned HTTP " + std::to_string(res->status));
    return res->body;
}

inline std::string call_plugin(const PluginEndpoint& ep,
                               const std::string& input_bytes,
                               const char* input_suffix) {
    ep.validate();
    switch (ep.transport) {
        case PluginTransport::subprocess:
            return run_subprocess_plugin(ep, input_bytes, input_suffix);
        case PluginTransport::http:
            return run_http_plugin(ep, input_bytes);
        case PluginTransport::builtin:
            break;
    }
    throw validation_error("plugin: builtin transport has no wire call");
}

// 8x8 grid of mean luma values in [0,1], integer sums per cell.
inline std::vector<float> gray_grid_8x8(const Image& img) {
    const std::size_t H = img.height(), W = img.width();
    std::vector<float> cells(64, 0.0f);
    for (std::size_t gy = 0; gy < 8; ++gy)
        for (std::size_t gx = 0; gx < 8; ++gx) {
            std::size_t y0 = gy * H / 8, y1 = (gy + 1) * H / 8;
            std::size_t x0 = gx * W / 8, x1 = (gx + 1) * W / 8;
            if (y1 == y0) y1 = std::min(y0 + 1, H);
            if (x1 == x0) x1 = std::min(x0 + 1, W);
            if (y0 >= H) { y0 = H - 1; y1 = H; }
            if (x0 >= W) { x0 = W - 1; x1 = W; }
            long long sum = 0;
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x)
                    sum += luma8(img.data.at(0, y, x), img.data.at(1, y, x),
                                 img.data.at(2, y, x));
            const long long count =
                static_cast<long long>(y1 - y0) * static_cast<long long>(x1 - x0);
            cells[gy * 8 + gx] =
                static_cast<float>(double(sum) / (double(count) * 255.0));
        }
    return cells;
}

inline Tensor normalized_or_basis(std::vector<double> v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    Tensor out({v.size()});
    if (ss == 0.0) {
        out[0] = 1.0f;
        return out;
    }
    const double norm = std::sqrt(ss);
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = static_cast<float>(v[i] / norm);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Built-in stubs: pure, seeded, integer-based where rounding could differ.
// ---------------------------------------------------------------------------

// Global-luminance Otsu threshold, then keep-largest-8-connected-component.
// Brighter side is foreground. Degenerate (single-luma) images give an empty
// mask with a warning.
inline Tensor stub_segment_mask(const Image& img) {
    const std::size_t H = img.height(), W = img.width();
    std::array<long long, 256> hist{};
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            ++hist[static_cast<std::size_t>(
                luma8(img.data.at(0, y, x), img.data.at(1, y, x),
                      img.data.at(2, y, x)))];

    int nonzero_bins = 0;
    for (long long c : hist)
        if (c > 0) ++nonzero_bins;
    Tensor mask({H, W});
    if (nonzero_bins <= 1) {
        LR_LOG_WARN("segmenter stub: constant image, returning an empty mask");
        return mask;
    }

    const long long total = static_cast<long long>(H) * W;
    long long sum_all = 0;
    for (int i = 0; i < 256; ++i) sum_all += static_cast<long long>(i) * hist[i];

    // Maximize between-class variance with exact integer arithmetic:
    // score(t) = (sumB * wF - (sum - sumB) * wB)^2 / (wB * wF).
    int best_t = 0;
    __int128 best_num = -1;
    long long best_den = 1;
    long long wB = 0, sumB = 0;
    for (int t = 0; t < 255; ++t) {
        wB += hist[t];
        sumB += static_cast<long long>(t) * hist[t];
        const long long wF = total - wB;
        if (wB == 0 || wF == 0) continue;
        const long long diff = sumB * wF - (sum_all - sumB) * wB;
        const __int128 num = static_cast<__int128>(diff) * diff;
        const long long den = wB * wF;
        if (num * best_den > best_num * den) {
            best_num = num;
            best_den = den;
            best_t = t;
        }
    }

    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            mask.at(y, x) =
                luma8(img.data.at(0, y, x), img.data.at(1, y, x),
                      img.data.at(2, y, x)) > best_t
                    ? 1.0f
                    : 0.0f;

    ComponentLabeling cl = label_components(mask);
    if (cl.volumes.empty()) {
        LR_LOG_WARN("segmenter stub: nothing above threshold, empty mask");
        return Tensor({H, W});
    }
    int keep = 0;
    std::size_t keep_vol = 0;
    for (const auto& [label, vol] : cl.volumes)
        if (vol > keep_vol) {
            keep = label;
            keep_vol = vol;
        }
    Tensor out({H, W});
    for (std::size_t i = 0; i < H * W; ++i)
        out[i] = (cl.labels[i] == keep) ? 1.0f : 0.0f;
    return out;
}

// 8x8 gray box-downsample, flattened and L2-normalized (64 dims).
inline Tensor stub_image_embedding(const Image& img) {
    const std::vector<float> cells = detail::gray_grid_8x8(img);
    std::vector<double> v(cells.begin(), cells.end());
    return detail::normalized_or_basis(std::move(v));
}

// Hashed bag-of-tokens with sign hashing, L2-normalized (64 dims).
inline Tensor stub_text_embedding(const std::string& text) {
    std::vector<double> v(64, 0.0);
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) {
        const std::uint64_t h = fnv1a64(tok);
        const std::size_t dim = static_cast<std::size_t>(h % 64);
        v[dim] += ((h >> 7) & 1) ? 1.0 : -1.0;
    }
    return detail::normalized_or_basis(std::move(v));
}

// Softmax over fixed seeded random projections of the 8x8 gray grid.
inline Tensor stub_class_posteriors(const Image& img, std::uint64_t seed,
                                    int n_classes = 8) {
    if (n_classes < 2)
        throw validation_error("classifier stub: need >= 2 classes");
    const std::vector<float> cells = detail::gray_grid_8x8(img);
    SplitMix64 g(sub_seed(seed, "classifier"));
    std::vector<double> logits(static_cast<std::size_t>(n_classes), 0.0);
    for (int k = 0; k < n_classes; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < cells.size(); ++j)
            s += g.next_symmetric(1.0) * double(cells[j]);
        logits[static_cast<std::size_t>(k)] = s;
    }
    double hi = logits[0];
    for (double l : logits) hi = std::max(hi, l);
    std::vector<double> exps(logits.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        exps[k] = det_exp(logits[k] - hi);
        sum += exps[k];
    }
    Tensor p({logits.size()});
    for (std::size_t k = 0; k < logits.size(); ++k)
        p[k] = static_cast<float>(exps[k] / sum);
    return p;
}

// ---------------------------------------------------------------------------
// Client hub
// ---------------------------------------------------------------------------

// One place holding the four endpoints plus the stub seed. Builtin
// transports route to the stubs; wire transports exchange PPM/PGM/LTR1
// payloads per the provider contract.
struct PluginHub {
    PluginEndpoint segmenter{PluginKind::segmenter, PluginTransport::builtin,
                             {}, 10.0};
    PluginEndpoint image_embedder{PluginKind::image_embedder,
                                  PluginTransport::builtin, {}, 10.0};
    PluginEndpoint text_embedder{PluginKind::text_embedder,
                                 PluginTransport::builtin, {}, 10.0};
    PluginEndpoint classifier{PluginKind::classifier, PluginTransport::builtin,
                              {}, 10.0};
    std::uint64_t stub_seed = 0;
    int stub_classes = 8;

    // Endpoints come from LR_SEGMENTER, LR_IMAGE_EMBEDDER, LR_TEXT_EMBEDDER,
    // LR_CLASSIFIER; the shared timeout from LR_PLUGIN_TIMEOUT (seconds).
    static PluginHub from_env(std::uint64_t stub_seed) {
        double timeout_s = 10.0;
        if (const char* t = std::getenv("LR_PLUGIN_TIMEOUT")) {
            try {
                timeout_s = std::stod(t);
            } catch (const std::exception&) {
                throw validation_error("LR_PLUGIN_TIMEOUT: not a number");
            }
        }
        auto from = [&](PluginKind kind, const char* var) {
            const char* v = std::getenv(var);
            return parse_endpoint(kind, v ? v : "", timeout_s);
        };
        PluginHub hub;
        hub.segmenter = from(PluginKind::segmenter, "LR_SEGMENTER");
        hub.image_embedder =
            from(PluginKind::image_embedder, "LR_IMAGE_EMBEDDER");
        hub.text_embedder = from(PluginKind::text_embedder, "LR_TEXT_EMBEDDER");
        hub.classifier = from(PluginKind::classifier, "LR_CLASSIFIER");
        hub.stub_seed = stub_seed;
        return hub;
    }

    BlendMask segment(const Image& img) const {
        BlendMask m;
        m.provenance = MaskProvenance::segmenter;
        if (segmenter.transport == PluginTransport::builtin) {
            m.data = stub_segment_mask(img);
            return m;
        }
        const std::string out =
            detail::call_plugin(segmenter, ppm_bytes(img), ".ppm");
        try {
            m.data = parse_pgm(out);
        } catch (const error& e) {
            throw plugin_error(std::string("segmenter response: ") + e.what());
        }
        if (m.data.dim(0) != img.height() || m.data.dim(1) != img.width())
            throw plugin_error("segmenter response: mask dims do not match "
                               "the input image");
        for (float v : m.data.values())
            if (v != 0.0f && v != 1.0f)
                throw plugin_error("segmenter response: mask is not binary "
                                   "{0,255}");
        return m;
    }

    Tensor embed_image(const Image& img) const {
        if (image_embedder.transport == PluginTransport::builtin)
            return stub_image_embedding(img);
        return parse_vector(
            detail::call_plugin(image_embedder, ppm_bytes(img), ".ppm"),
            image_embedder);
    }

    Tensor embed_text(const std::string& text) const {
        if (text_embedder.transport == PluginTransport::builtin)
            return stub_text_embedding(text);
        return parse_vector(detail::call_plugin(text_embedder, text, ".txt"),
                            text_embedder);
    }

    Tensor classify(const Image& img) const {
        Tensor p;
        if (classifier.transport == PluginTransport::builtin) {
            p = stub_class_posteriors(img, stub_seed, stub_classes);
        } else {
            p = parse_vector(
                detail::call_plugin(classifier, ppm_bytes(img), ".ppm"),
                classifier);
        }
        double sum = 0.0;
        for (float v : p.values()) {
            if (v < 0.0f)
                throw plugin_error("classifier response: negative probability");
            sum += v;
        }
        if (std::fabs(sum - 1.0) > 1e-6)
            throw plugin_error("classifier response: probabilities sum to " +
                               std::to_string(sum) + ", expected 1");
        return p;
    }

private:
    static Tensor parse_vector(const std::string& bytes,
                               const PluginEndpoint& ep) {
        Tensor t;
        try {
            t = ltr1_parse(std::span<const unsigned char>(
                reinterpret_cast<const unsigned char*>(bytes.data()),
                bytes.size()));
        } catch (const error& e) {
            throw plugin_error(std::string(to_string(ep.kind)) +
                               " response: " + e.what());
        }
        if (t.rank() != 1)
            throw plugin_error(std::string(to_string(ep.kind)) +
                               " response: expected a rank-1 vector, got rank " +
                               std::to_string(t.rank()));
        if (!t.all_finite())
            throw plugin_error(std::string(to_string(ep.kind)) +
                               " response: non-finite values");
        return t;
    }
};

}  // namespace lr
