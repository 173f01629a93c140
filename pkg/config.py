# Global configuration for the class-guided COD desk build
CONFIG = {
    "log_level": "INFO",
    "log_file": "cgnet_desk.log",
    # Encoder defaults (desk scale; 336/448 remain legal)
    "encoder": {
        "seed": 20240531,
        "text_dim": 32,
        "visual_dim": 32,
        "backbone_channels": [16, 32, 64, 128],
        "prompt_side": 64,
        "detector_side": 64,
    },
    "model": {
        "heads": 4,
        "activation": "relu",
        "scm_groups": 4,
        "zero_init_heads": True,
        # "subpixel" gives every output pixel its own head readout; "bilinear" upsamples one logit per cell
        "head_upsample": "subpixel",
        "logit_scale": 64.0,
    },
    "optim": {
        "lr": 1e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "batch_size": 4,
        "steps": 300,
        "epochs": None,
        "hflip": True,
        "random_crop": False,
        "color_jitter": False,
    },
    "supported_activations": ["relu", "gelu", "identity"],
    "seed": 0,
    "outputs_dir": "outputs",
    "checkpoint_name": "model.cgt",
    "loss_csv_name": "loss_trace.csv",
    "metrics_csv_name": "metrics.csv",
    "hard_normal_threshold": 0.9,
    "gradcheck_step": 1e-5,
    "gradcheck_tol": 1e-4,
    "gradcheck_tol_end_to_end": 1e-3,
    # gradients below this magnitude are compared absolutely
    "gradcheck_floor": 1e-3,
    "server_name": "0.0.0.0",
    "server_port": 7860,
}
