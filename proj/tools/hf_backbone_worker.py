#!/usr/bin/env python3
"""Seq2seq backbone worker wrapping a Hugging Face encoder-decoder model.

Speaks the one-JSON-object-per-line protocol documented in the subprocess
backbone header: info / set_training / encode / train_step / optimizer_step /
zero_grad / generate / save / load / shutdown. Faults are reported as
{"error": "..."} replies; the worker exits when stdin closes.

Semantics expected by the parent:
  * train_step accumulates weight * d(mean batch loss)/dtheta into the
    gradients and returns the raw (unweighted) per-example losses;
  * optimizer_step applies the accumulated gradients at the given learning
    rate and implicitly starts a fresh accumulation;
  * encode returns one mean-pooled encoder hidden state per input text;
  * generation is greedy.

Requires torch + transformers and model weights available locally or via the
normal Hugging Face cache; there is no fallback. Typical use:

  crex train --config run.cfg   # with: backbone = worker
  # worker_command = python3 tools/hf_backbone_worker.py --model t5-small
"""

import argparse
import json
import sys


def fail_forever(message):
    """Answer every request with the same error; lets the parent report a
    missing dependency instead of seeing a silent exit."""
    for _ in sys.stdin:
        sys.stdout.write(json.dumps({"error": message}) + "\n")
        sys.stdout.flush()


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--model", default="t5-small",
                        help="model name or local path (default: t5-small)")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--device", default=None,
                        help="torch device (default: cuda if available, else cpu)")
    parser.add_argument("--max-input", type=int, default=512)
    parser.add_argument("--max-output", type=int, default=128)
    args = parser.parse_args()

    try:
        import torch
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer
    except ImportError as exc:
        fail_forever("missing dependency: {} (install torch and transformers)".format(exc))
        return

    torch.manual_seed(args.seed)
    device = args.device or ("cuda" if torch.cuda.is_available() else "cpu")
    try:
        tokenizer = AutoTokenizer.from_pretrained(args.model)
        model = AutoModelForSeq2SeqLM.from_pretrained(args.model).to(device)
    except Exception as exc:  # weights unavailable, bad name, ...
        fail_forever("cannot load model '{}': {}".format(args.model, exc))
        return
    model.eval()
    optimizer = torch.optim.AdamW(model.parameters(), lr=1e-4)

    def tokenize(texts, limit):
        return tokenizer(list(texts), return_tensors="pt", padding=True,
                         truncation=True, max_length=limit).to(device)

    def handle(msg):
        op = msg["op"]
        if op == "info":
            return {"model_id": args.model,
                    "feature_dim": model.config.d_model,
                    "max_input_length": args.max_input,
                    "max_output_length": args.max_output}
        if op == "set_training":
            model.train(bool(msg["on"]))
            return {"ok": True}
        if op == "encode":
            enc = tokenize(msg["texts"], args.max_input)
            with torch.no_grad():
                hidden = model.get_encoder()(**enc).last_hidden_state
            mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
            pooled = (hidden * mask).sum(1) / mask.sum(1).clamp(min=1.0)
            return {"features": pooled.cpu().double().tolist()}
        if op == "train_step":
            enc = tokenize(msg["inputs"], args.max_input)
            with tokenizer.as_target_tokenizer():
                labels = tokenize(msg["targets"], args.max_output)["input_ids"]
            labels = labels.masked_fill(labels == tokenizer.pad_token_id, -100)
            logits = model(**enc, labels=labels).logits
            flat = torch.nn.functional.cross_entropy(
                logits.transpose(1, 2), labels, ignore_index=-100, reduction="none")
            counts = (labels != -100).sum(1).clamp(min=1)
            per_example = flat.sum(1) / counts
            (float(msg["weight"]) * per_example.mean()).backward()
            return {"losses": per_example.detach().cpu().double().tolist()}
        if op == "optimizer_step":
            for group in optimizer.param_groups:
                group["lr"] = float(msg["learning_rate"])
            optimizer.step()
            optimizer.zero_grad()
            return {"ok": True}
        if op == "zero_grad":
            optimizer.zero_grad()
            return {"ok": True}
        if op == "generate":
            enc = tokenize(msg["inputs"], args.max_input)
            with torch.no_grad():
                out = model.generate(**enc, max_new_tokens=args.max_output,
                                     do_sample=False, num_beams=1)
            return {"outputs": tokenizer.batch_decode(out, skip_special_tokens=True)}
        if op == "save":
            model.save_pretrained(msg["dir"])
            tokenizer.save_pretrained(msg["dir"])
            return {"ok": True}
        if op == "load":
            nonlocal_model = AutoModelForSeq2SeqLM.from_pretrained(msg["dir"]).to(device)
            model.load_state_dict(nonlocal_model.state_dict())
            return {"ok": True}
        if op == "shutdown":
            return {"ok": True}
        raise ValueError("unknown op: {}".format(op))

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        msg = {}
        try:
            msg = json.loads(line)
            reply = handle(msg)
        except Exception as exc:
            reply = {"error": str(exc)}
        try:
            sys.stdout.write(json.dumps(reply) + "\n")
            sys.stdout.flush()
        except BrokenPipeError:
            return
        if msg.get("op") == "shutdown":
            return


if __name__ == "__main__":
    main()
