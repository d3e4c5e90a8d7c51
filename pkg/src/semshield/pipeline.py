"""Two-pass protected generation.

Pass 1 runs only the first few denoising steps of a plain generation and
records every cross/self attention map.  Regions are extracted from
those maps, the protection mask is built, and pass 2 re-denoises from
the *same* starting noise with the mask applied to cross-attention at
every step; during the first few steps the self-attention maps are
replaced with the recorded ones so the layout the model committed to is
preserved.

A full protected generation therefore costs exactly
``total_steps + protection_steps`` backend iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionRecord, AttnMap, Grid
from .denoiser import DenoiserBackend, Hooks, ToyDenoiser
from .errors import BackendFailure, RecordMismatch, SemShieldError
from .extraction import ExtractionConfig, RegionSet, extract
from .prompts import ParsedPrompt, Template, map_to_tokens, parse_prompt
from .protection import ProtectionMask, blocked_token_groups, build_protection_mask


@dataclass
class PipelineConfig:
    """Sampler and protection settings; defaults are the reference setup."""

    total_steps: int = 20
    protection_steps: int = 2
    guidance_scale: float = 7.5
    seed: int = 0
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    image_size: tuple[int, int] = (768, 768)
    scheduler: str = "ddim"
    # layers the cross-attention mask applies to; None means all of them
    protected_layers: tuple[str, ...] | None = None

    def __post_init__(self):
        if not (0 <= self.protection_steps <= self.total_steps):
            raise ValueError("need 0 <= protection_steps <= total_steps")
        if self.scheduler != "ddim":
            raise ValueError(f"unknown scheduler {self.scheduler!r}")


@dataclass
class Pass2Result:
    latent: np.ndarray
    image: np.ndarray
    records: list[AttentionRecord]
    steps: int


@dataclass
class GenerationResult:
    image: np.ndarray
    latent: np.ndarray
    x_noise: np.ndarray
    parsed: ParsedPrompt
    regions: RegionSet | None
    mask: ProtectionMask | None
    records_pass1: list[AttentionRecord]
    records_pass2: list[AttentionRecord]
    diagnostics: dict

    @property
    def protection_active(self) -> bool:
        return bool(self.diagnostics.get("protection_active"))


def alpha_bar_schedule(total_steps: int) -> np.ndarray:
    """Cumulative signal levels from almost-pure noise to almost-clean.

    Entry s is the level *before* executing step s; the last entry is the
    level after the final step.
    """
    return np.linspace(0.05, 0.999, total_steps + 1)


def ddim_step(z: np.ndarray, eps: np.ndarray, a_cur: float, a_next: float) -> np.ndarray:
    """Deterministic (eta=0) update: re-noise the denoised estimate."""
    x0 = (z - np.sqrt(1.0 - a_cur) * eps) / np.sqrt(a_cur)
    return np.sqrt(a_next) * x0 + np.sqrt(1.0 - a_next) * eps


def initial_noise(cfg: PipelineConfig, backend: DenoiserBackend) -> np.ndarray:
    return np.random.default_rng(cfg.seed).standard_normal(backend.latent_shape())


class _Recorder:
    """Collects per-(step, layer) cross/self map pairs from hooks."""

    def __init__(self):
        self._slots: dict[tuple[int, str], dict[str, AttnMap]] = {}
        self.step = 0

    def hook(self, layer: str, kind: str, attn_map: AttnMap):
        slot = self._slots.setdefault((self.step, layer), {})
        slot[kind] = attn_map

    def records(self) -> list[AttentionRecord]:
        out = []
        for (step, layer), maps in self._slots.items():
            out.append(
                AttentionRecord(
                    step=step, layer=layer, cross=maps["cross"], self_map=maps["self"]
                )
            )
        return out


def _predict(backend, z, emb, t, hooks):
    try:
        return backend.predict(z, emb, t, hooks)
    except SemShieldError:
        raise
    except Exception as exc:  # backend bugs surface as one error type
        raise BackendFailure(f"backend.predict failed at step {t}: {exc}") from exc


def _run(
    cfg: PipelineConfig,
    backend: DenoiserBackend,
    prompt: str,
    z0: np.ndarray,
    steps: int,
    mask: ProtectionMask | None = None,
    override_records: dict[tuple[int, str], AttentionRecord] | None = None,
    override_until: int = 0,
) -> tuple[np.ndarray, list[AttentionRecord], int]:
    """Shared denoising engine for plain, recording and protected runs.

    The mask (when given) is applied to the conditional branch at every
    step; self-attention overrides apply for steps < ``override_until``.
    Returns (final latent, records of the conditional branch, steps run).
    """
    cond = backend.embed_tokens(backend.tokenize(prompt).ids)
    uncond = backend.embed_tokens(backend.tokenize("").ids)
    schedule = alpha_bar_schedule(cfg.total_steps)

    recorder = _Recorder()
    protected = set(cfg.protected_layers) if cfg.protected_layers is not None else None

    def cross_mask(layer: str, grid: Grid):
        if mask is None:
            return None
        if protected is not None and layer not in protected:
            return None
        return mask.values_at(grid)

    z = np.asarray(z0, dtype=np.float64).copy()
    for t in range(steps):
        def self_override(layer: str, grid: Grid, _t=t):
            if override_records is None or _t >= override_until:
                return None
            rec = override_records.get((_t, layer))
            if rec is None:
                raise RecordMismatch(f"no stored self map for step {_t}, layer {layer}")
            return rec.self_map.values

        recorder.step = t
        hooks = Hooks(
            record=recorder.hook,
            cross_mask=cross_mask if mask is not None else None,
            self_override=self_override if override_records is not None else None,
        )
        eps_c = _predict(backend, z, cond, t, hooks)
        eps_u = _predict(backend, z, uncond, t, None)
        eps = eps_u + cfg.guidance_scale * (eps_c - eps_u)
        z = ddim_step(z, eps, schedule[t], schedule[t + 1])
    return z, recorder.records(), steps


def pass1_record(
    cfg: PipelineConfig, parsed: ParsedPrompt, backend: DenoiserBackend
) -> tuple[list[AttentionRecord], np.ndarray]:
    """Run the first ``protection_steps`` plain steps, recording attention.

    Returns the records and the exact starting noise, which pass 2 must
    reuse.
    """
    x_noise = initial_noise(cfg, backend)
    _, records, _ = _run(
        cfg, backend, parsed.raw, x_noise, steps=cfg.protection_steps
    )
    return records, x_noise


def pass2_protected(
    cfg: PipelineConfig,
    parsed: ParsedPrompt,
    backend: DenoiserBackend,
    sp_mask: ProtectionMask,
    records: list[AttentionRecord],
    x_noise: np.ndarray | None = None,
) -> Pass2Result:
    """Full protected run from the same noise as pass 1.

    Cross-attention is shielded at every step; for steps below
    ``protection_steps`` each self-attention map is replaced with the
    stored one.  Raises :class:`RecordMismatch` when a replayed step has
    no stored map.
    """
    if x_noise is None:
        x_noise = initial_noise(cfg, backend)
    by_site = {(r.step, r.layer): r for r in records}
    z, recs, steps = _run(
        cfg,
        backend,
        parsed.raw,
        x_noise,
        steps=cfg.total_steps,
        mask=sp_mask,
        override_records=by_site,
        override_until=cfg.protection_steps,
    )
    return Pass2Result(latent=z, image=backend.decode(z), records=recs, steps=steps)


def plain_generate(
    cfg: PipelineConfig, prompt: str, backend: DenoiserBackend
) -> Pass2Result:
    """Unprotected baseline generation (single pass, no hooks beyond
    recording)."""
    x_noise = initial_noise(cfg, backend)
    z, recs, steps = _run(cfg, backend, prompt, x_noise, steps=cfg.total_steps)
    return Pass2Result(latent=z, image=backend.decode(z), records=recs, steps=steps)


def _degenerate_mask(parsed: ParsedPrompt, backend: DenoiserBackend) -> ProtectionMask:
    """Structurally correct no-op mask for runs that recorded nothing."""
    grid = min(backend.layer_grids().values(), key=lambda g: g[0] * g[1])
    w, h = grid
    blocked, surfaces, labels = blocked_token_groups(parsed)
    return ProtectionMask(
        region_masks=[np.zeros((h, w), dtype=bool) for _ in parsed.concepts],
        blocked_tokens=blocked,
        token_count=parsed.token_count,
        grid=grid,
        labels=labels,
        blocked_surfaces=surfaces,
    )


def generate(
    prompt: str,
    cfg: PipelineConfig | None = None,
    backend: DenoiserBackend | None = None,
    template: Template | str | None = None,
    protect: bool = True,
) -> GenerationResult:
    """Parse, extract, shield, denoise: the full two-pass orchestration.

    Prompts that parse to at most one concept skip protection entirely
    (there is nothing to disentangle) and run a single plain pass; the
    diagnostics say which path ran.
    """
    cfg = cfg or PipelineConfig()
    backend = backend or ToyDenoiser()

    word_parse = parse_prompt(prompt, template)
    parsed = map_to_tokens(word_parse, backend.tokenize(prompt).pairs)

    diagnostics: dict = {
        "prompt": prompt,
        "n_concepts": parsed.n_concepts,
        "seed": cfg.seed,
        "total_steps": cfg.total_steps,
        "protection_steps": cfg.protection_steps,
    }

    if not protect or parsed.n_concepts <= 1:
        x_noise = initial_noise(cfg, backend)
        result = plain_generate(cfg, prompt, backend)
        diagnostics.update(
            protection_active=False,
            backend_steps=result.steps,
            reason="protection disabled" if not protect else "fewer than two concepts",
        )
        return GenerationResult(
            image=result.image,
            latent=result.latent,
            x_noise=x_noise,
            parsed=parsed,
            regions=None,
            mask=None,
            records_pass1=[],
            records_pass2=result.records,
            diagnostics=diagnostics,
        )

    records, x_noise = pass1_record(cfg, parsed, backend)
    if cfg.protection_steps == 0:
        # nothing was recorded, so nothing can be extracted: masking
        # degrades to a structurally correct no-op and no map is replaced
        regions = None
        sp_mask = _degenerate_mask(parsed, backend)
        diagnostics["degenerate_extraction"] = "protection_steps is 0"
    else:
        regions = extract(records, parsed, cfg.extraction)
        sp_mask = build_protection_mask(regions, parsed)
    result = pass2_protected(cfg, parsed, backend, sp_mask, records, x_noise=x_noise)
    diagnostics.update(
        protection_active=True,
        backend_steps=cfg.protection_steps + result.steps,
        mask_summary=sp_mask.describe(),
        region_cells=[int(r.sum()) for r in regions.regions] if regions else [],
    )
    return GenerationResult(
        image=result.image,
        latent=result.latent,
        x_noise=x_noise,
        parsed=parsed,
        regions=regions,
        mask=sp_mask,
        records_pass1=records,
        records_pass2=result.records,
        diagnostics=diagnostics,
    )
