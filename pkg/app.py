"""
nats - command-line front end.

    python app.py vocab  --input train.jsonl --cap 50000
    python app.py train  --config run.cfg --strategy scst --dad 0.75
    python app.py decode --checkpoint runs/x/checkpoints/latest.ckpt --beam 5
    python app.py eval   --summaries runs/x/summaries.txt --references test.jsonl

Every subcommand accepts --config FILE and repeated --set key=value
overrides on top of NATS_* environment variables. Exit status: 0 success,
2 invalid configuration or usage, 3 missing file, 1 any other failure.
"""

import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import click
from tqdm import tqdm

from core.config import RunConfig, load_run_config, write_manifest
from core.exceptions import ConfigError, NatsError
from models.config import DecodeMode
from models.vocabulary import ExtendedExample, Vocabulary
from services.checkpoint_service import load_checkpoint, restore_model
from services.decoding_service import decode_example, hypothesis_tokens, make_backward_scorer, mmi_rerank
from services.export_service import write_nbest_jsonl, write_rouge_csv, write_summaries
from services.rouge_service import evaluate_corpus
from services.text_data_service import (
    build_vocab,
    encode_corpus,
    load_corpus,
    load_vocab,
    save_vocab,
    tokenize,
)
from services.training_service import train_loop

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# ======================================================
# HELPERS
# ======================================================

def _parse_sets(pairs: Sequence[str]) -> Dict[str, str]:
    values = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _resolve(config_path: Optional[str], sets: Sequence[str], **flags) -> RunConfig:
    """Config file < --set < dedicated flags (None flags are not given)."""
    overrides = _parse_sets(sets)
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return load_run_config(config_path, overrides)


def _require(config: RunConfig, key: str) -> str:
    value = getattr(config, key)
    if not value:
        raise ConfigError(f"{key} is required for this command")
    return value


def _limits(config: RunConfig) -> Tuple[int, int]:
    return config.src_max_len, config.tgt_max_len


def _vocabulary(config: RunConfig) -> Vocabulary:
    return load_vocab(_require(config, "vocab_path"), config.vocab_cap)


def _examples(path: str, vocab: Vocabulary, config: RunConfig) -> List[ExtendedExample]:
    return encode_corpus(load_corpus(path), vocab, _limits(config))


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                             help="key = value configuration file")
set_option = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE", help="override one config key")


# ======================================================
# COMMANDS
# ======================================================

@click.group()
@click.option("--verbose", is_flag=True, help="debug logging")
def cli(verbose: bool):
    """Neural abstractive summarization toolkit."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


@cli.command()
@config_option
@set_option
@click.option("--input", "train_path", default=None, help="training corpus (JSON Lines)")
@click.option("--cap", "vocab_cap", type=int, default=None, help="vocabulary size, reserved tokens included")
@click.option("--output", "vocab_path", default=None, help="vocabulary file to write")
def vocab(config_path, sets, train_path, vocab_cap, vocab_path):
    """Build a vocabulary from the training corpus."""
    config = _resolve(config_path, sets, train_path=train_path, vocab_cap=vocab_cap, vocab_path=vocab_path)
    target = config.vocab_path or str(Path(config.output_dir) / "vocab.txt")
    built = build_vocab(load_corpus(_require(config, "train_path")), config.vocab_cap)
    save_vocab(built, target)
    write_manifest(config.model_copy(update={"vocab_path": target}), Path(target).parent)
    click.echo(f"vocabulary: {len(built)} entries -> {target}")


@cli.command()
@config_option
@set_option
@click.option("--strategy", default=None, help="xent | dad | e2e | reinforce | mixer | scst")
@click.option("--dad", "dad_alpha", type=float, default=None, help="scheduled-sampling alpha")
@click.option("--model-id", "model_id", default=None, help="component ID such as C10101")
@click.option("--epochs", type=int, default=None)
@click.option("--resume", type=click.Path(dir_okay=False), default=None, help="checkpoint to continue from")
def train(config_path, sets, strategy, dad_alpha, model_id, epochs, resume):
    """Train a model; checkpoints and metrics.csv go under output_dir."""
    config = _resolve(config_path, sets, strategy=strategy, dad_alpha=dad_alpha, model_id=model_id, epochs=epochs)
    train_path = _require(config, "train_path")
    if config.vocab_path:
        vocabulary = _vocabulary(config)
    else:
        vocabulary = build_vocab(load_corpus(train_path), config.vocab_cap)
        target = save_vocab(vocabulary, Path(config.output_dir) / "vocab.txt")
        config = config.model_copy(update={"vocab_path": str(target)})

    train_examples = _examples(train_path, vocabulary, config)
    dev_examples = _examples(config.dev_path, vocabulary, config) if config.dev_path else None
    history = train_loop(config, vocabulary, train_examples, dev_examples, resume_from=resume)
    if history:
        last = history[-1]
        click.echo(f"epoch {last.epoch} loss {last.loss:.4f} -> {config.output_dir}")


@cli.command()
@config_option
@set_option
@click.option("--checkpoint", default=None, type=click.Path(dir_okay=False))
@click.option("--input", "test_path", default=None, help="corpus to summarize (JSON Lines)")
@click.option("--mode", "decode_mode", default=None, help="greedy | beam | dbs")
@click.option("--beam", "beam_size", type=int, default=None)
@click.option("--groups", type=int, default=None)
@click.option("--group-diversity", "group_diversity", type=float, default=None)
@click.option("--diversity-rate", "diversity_rate", type=float, default=None)
@click.option("--max-len", "decode_max_len", type=int, default=None)
def decode(config_path, sets, checkpoint, test_path, decode_mode, beam_size, groups, group_diversity,
           diversity_rate, decode_max_len):
    """Write summaries.txt and nbest.jsonl under output_dir."""
    config = _resolve(config_path, sets, checkpoint=checkpoint, test_path=test_path, decode_mode=decode_mode,
                      beam_size=beam_size, groups=groups, group_diversity=group_diversity,
                      diversity_rate=diversity_rate, decode_max_len=decode_max_len)
    vocabulary = _vocabulary(config)
    model = restore_model(load_checkpoint(_require(config, "checkpoint")))
    if model.vocab_size != len(vocabulary):
        raise ConfigError(f"checkpoint expects a vocabulary of {model.vocab_size}, {config.vocab_path} has {len(vocabulary)}")
    decoding = config.build_decoding()
    reverse = None
    if config.mmi_weight:
        reverse = restore_model(load_checkpoint(_require(config, "reverse_checkpoint")))
        if decoding.mode == DecodeMode.GREEDY:
            logger.warning("MMI reranking has a single greedy candidate to reorder")

    output_dir = Path(config.output_dir)
    write_manifest(config, output_dir)
    summaries, nbest = [], []
    examples = _examples(_require(config, "test_path"), vocabulary, config)
    for example in tqdm(examples, desc="decode", disable=not config.progress):
        reranker = None
        if reverse is not None:
            backward = make_backward_scorer(reverse, vocabulary, example, (config.tgt_max_len, config.src_max_len))
            reranker = lambda hyps, backward=backward: mmi_rerank(
                hyps, backward, lam=config.mmi_weight, beta=config.mmi_length_weight)
        result = decode_example(model, example, decoding, vocabulary, reranker)
        summaries.append(result.summary)
        candidates = []
        for hyp in result.hypotheses:
            record = hyp.to_dict(decoding.length_penalty)
            record["tokens"] = hypothesis_tokens(hyp, vocabulary, example.oov_tokens)[0]
            candidates.append(record)
        nbest.append({"id": example.example_id, "candidates": candidates})

    write_summaries(summaries, output_dir / "summaries.txt")
    write_nbest_jsonl(nbest, output_dir / "nbest.jsonl")
    click.echo(f"decoded {len(summaries)} examples -> {output_dir}")


@cli.command(name="eval")
@config_option
@set_option
@click.option("--summaries", required=True, type=click.Path(dir_okay=False), help="one summary per line")
@click.option("--references", "test_path", default=None, help="reference corpus (JSON Lines)")
@click.option("--output", default=None, help="ROUGE CSV (default output_dir/rouge.csv)")
def evaluate(config_path, sets, summaries, test_path, output):
    """Score summaries against the reference corpus with ROUGE-1/2/L."""
    config = _resolve(config_path, sets, test_path=test_path)
    path = Path(summaries)
    if not path.exists():
        raise FileNotFoundError(f"summaries file not found: {path}")
    candidates = [tokenize(line) for line in path.read_text(encoding="utf-8").splitlines()]
    references = [record["summary"] for record in load_corpus(_require(config, "test_path"))]
    if len(candidates) != len(references):
        raise ConfigError(f"{len(candidates)} summaries for {len(references)} references")

    target = Path(output) if output else Path(config.output_dir) / "rouge.csv"
    write_manifest(config, target.parent)
    frame = write_rouge_csv(evaluate_corpus(zip(candidates, references)), target)
    logger.info("ROUGE report\n" + frame.to_string(index=False))
    click.echo(frame.to_string(index=False))


# ======================================================
# ENTRY POINT
# ======================================================

def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and map failures to an exit status."""
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name="nats", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        return 2
    except FileNotFoundError as e:
        click.echo(f"missing file: {e}", err=True)
        return 3
    except NatsError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(dispatch())
