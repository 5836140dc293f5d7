import os
from dotenv import load_dotenv
from covis_fusion import FusionConfig, load_config, rre, rte, train
from covis_fusion.pipeline import fuse_pair, generate_pairs
from covis_fusion.scene import canonical_spec

# Load environment variables from .env file (COVIS_* keys override config values)
load_dotenv()


def main():
    try:
        config_path = os.getenv("FUSION_CONFIG_FILE")
        config: FusionConfig = load_config(config_path)

        # A small training set of mixed light traffic scenes
        specs = [canonical_spec(name, seed) for seed in range(8)
                 for name in ("straight_light", "intersection_light", "t_junction_light")]
        training = generate_pairs(specs, config)
        result = train(training, config.match, seed=0, separation=config.separation)
        print(f"Training loss: {result.loss_trace[0]:.4f} -> {result.loss_trace[-1]:.4f}")

        # One unseen frame pair, exchanged and aligned
        pair = generate_pairs([canonical_spec("straight_light", 1234)], config, first_id=100)[0]
        fused, _ = fuse_pair(pair, result.params, config)
        if not fused.fused:
            print(f"No fusion for frame {pair.frame_id}: {fused.reason.value}")
            return

        print(f"Matched pairs: {fused.match.n_pairs}, payload: {fused.payload_bytes} bytes")
        print(f"RRE: {rre(fused.transform, pair.truth_transform):.3f} deg, "
              f"RTE: {rte(fused.transform, pair.truth_transform):.3f} m")
        print(f"Pipeline compute: {fused.timings.compute:.1f} ms")

    except Exception as e:
        print(f"Error: {str(e)}")


if __name__ == "__main__":
    main()
