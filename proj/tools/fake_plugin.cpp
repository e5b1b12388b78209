// Test double for the subprocess plugin protocol. Reads the input file
// named by argv[1] and answers according to LR_FAKE_MODE:
//   segment    PPM in, stub segmenter PGM out (default)
//   embed      PPM or text in, fixed-seed LTR1 embedding out
//   classify   PPM in, stub posterior LTR1 out
//   sleep      blocks past any reasonable timeout
//   bad-stdout prints a path that does not exist
//   garbage    writes bytes that parse as nothing
//   fail       exits nonzero without output
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <thread>

#include "lr/image.hpp"
#include "lr/plugins.hpp"
#include "lr/tensor.hpp"

int main(int argc, char** argv) {
    if (argc != 2) return 2;
    const char* mode_env = std::getenv("LR_FAKE_MODE");
    const std::string mode = mode_env ? mode_env : "segment";

    if (mode == "sleep") {
        std::this_thread::sleep_for(std::chrono::seconds(30));
        return 0;
    }
    if (mode == "fail") return 9;

    const std::string in = lr::detail::read_file_bytes(argv[1]);
    const std::string out_path = std::string(argv[1]) + ".out";

    if (mode == "bad-stdout") {
        std::printf("/nonexistent/fake-plugin-output\n");
        return 0;
    }
    if (mode == "garbage") {
        lr::detail::write_file_bytes(out_path, "not a tensor, not an image");
        std::printf("%s\n", out_path.c_str());
        return 0;
    }
    if (mode == "embed") {
        lr::Tensor emb({8});
        for (std::size_t i = 0; i < 8; ++i)
            emb[i] = static_cast<float>(i) * 0.25f - 1.0f;
        lr::detail::write_file_bytes(out_path, lr::ltr1_bytes(emb));
        std::printf("%s\n", out_path.c_str());
        return 0;
    }
    if (mode == "classify") {
        const lr::Image img = lr::parse_ppm(in);
        lr::Tensor post = lr::stub_class_posteriors(img, 7, 8);
        lr::detail::write_file_bytes(out_path, lr::ltr1_bytes(post));
        std::printf("%s\n", out_path.c_str());
        return 0;
    }

    const lr::Image img = lr::parse_ppm(in);
    const lr::Tensor mask = lr::stub_segment_mask(img);
    lr::detail::write_file_bytes(out_path, lr::pgm_bytes(mask));
    std::printf("%s\n", out_path.c_str());
    return 0;
}
