"""Data-free low-bit quantization with an attention-conditioned generator."""

from acq._acq import (
    ArchiveError,
    FormatError,
    Generator,
    LayerGraph,
    NumericError,
    ShapeError,
    accuracy,
    archive_kind,
    attention_centers,
    attention_controllability,
    attention_maps,
    build_target_net,
    ce_loss,
    default_config,
    fake_quantize,
    generate_shapes,
    js_divergence,
    kd_loss,
    known_specs,
    load_generator,
    load_model,
    new_generator,
    parse_bit_widths,
    quantize_graph,
    run,
    save_generator,
    save_model,
)

__all__ = [name for name in dir() if not name.startswith("_")]
