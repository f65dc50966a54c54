"""Embedding helper for the `pretrained` backend.

Loads a Hugging Face CLAP checkpoint and answers JSON-lines requests on stdin:

    {"op": "describe"}
    {"op": "text", "text": "..."}
    {"op": "audio", "samples": [...]}
    {"op": "audio_vjp", "samples": [...], "cotangent": [...]}

Audio features are computed with a torch re-implementation of the
checkpoint's log-mel front end so gradients reach the waveform.
Replies are single JSON lines; failures are reported as {"error": "..."}.
"""

import json
import sys

import numpy as np
import torch
from transformers import ClapModel, ClapProcessor


def load(checkpoint):
    model = ClapModel.from_pretrained(checkpoint).double().eval()
    for p in model.parameters():
        p.requires_grad_(False)
    processor = ClapProcessor.from_pretrained(checkpoint)
    return model, processor


class Frontend:
    def __init__(self, fe):
        self.sr = fe.sampling_rate
        self.n_fft = fe.fft_window_size
        self.hop = fe.hop_length
        self.max_len = fe.nb_max_samples
        fusion = getattr(fe, "truncation", "fusion") == "fusion"
        mel = fe.mel_filters if fusion else fe.mel_filters_slaney
        self.mel = torch.tensor(np.asarray(mel), dtype=torch.float64)
        self.window = torch.hann_window(self.n_fft, periodic=True, dtype=torch.float64)
        self.fusion = fusion

    def __call__(self, wave):
        n = wave.shape[0]
        if n < self.max_len:
            reps = max(self.max_len // n, 1)
            wave = wave.repeat(reps)
            wave = torch.nn.functional.pad(wave, (0, self.max_len - wave.shape[0]))
        else:
            wave = wave[: self.max_len]
        spec = torch.stft(
            wave,
            self.n_fft,
            hop_length=self.hop,
            window=self.window,
            center=True,
            pad_mode="reflect",
            return_complex=True,
        )
        power = spec.abs() ** 2
        mel = power.T @ self.mel
        logmel = 10.0 * torch.log10(torch.clamp(mel, min=1e-10))
        if self.fusion:
            feats = torch.stack([logmel] * 4, dim=0)
        else:
            feats = logmel[None]
        return feats[None]


def main():
    checkpoint = sys.argv[1]
    model, processor = load(checkpoint)
    front = Frontend(processor.feature_extractor)
    is_longer = torch.tensor([[False]])

    def audio_embed(samples):
        feats = front(samples)
        return model.get_audio_features(input_features=feats, is_longer=is_longer)[0]

    for line in sys.stdin:
        try:
            req = json.loads(line)
            op = req["op"]
            if op == "describe":
                out = {
                    "dimension": int(model.config.projection_dim),
                    "sample_rate": int(front.sr),
                    "max_seconds": front.max_len / front.sr,
                }
            elif op == "text":
                tok = processor.tokenizer([req["text"]], return_tensors="pt", padding=True)
                with torch.no_grad():
                    emb = model.get_text_features(**tok)[0]
                out = {"embedding": emb.double().tolist()}
            elif op == "audio":
                wave = torch.tensor(req["samples"], dtype=torch.float64)
                with torch.no_grad():
                    emb = audio_embed(wave)
                out = {"embedding": emb.tolist()}
            elif op == "audio_vjp":
                wave = torch.tensor(req["samples"], dtype=torch.float64, requires_grad=True)
                cot = torch.tensor(req["cotangent"], dtype=torch.float64)
                emb = audio_embed(wave)
                (grad,) = torch.autograd.grad(emb, wave, grad_outputs=cot)
                out = {"embedding": emb.detach().tolist(), "grad": grad.tolist()}
            else:
                out = {"error": f"unknown op {op}"}
        except Exception as exc:  # reported back to the caller
            out = {"error": repr(exc)}
        sys.stdout.write(json.dumps(out) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
