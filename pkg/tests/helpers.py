"""Small synthetic corpora for tests."""

from dysdiff.corpus import TORGO_DYSARTHRIC, UtteranceRecord

WORDS = ("the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "sun", "river")


def prompt_for(k, n_words=10):
    return " ".join(WORDS[(k + i) % len(WORDS)] for i in range(n_words))


def real_corpus(speakers=tuple(sorted(TORGO_DYSARTHRIC)), per_speaker=10, both_mics=True, n_words=10):
    out = []
    for spk in speakers:
        for k in range(per_speaker):
            mics = ("array", "head") if both_mics else ("head",)
            for mic in mics:
                out.append(UtteranceRecord(
                    utterance_id=f"{spk}-{mic}-{k:03d}", speaker=spk, prompt=prompt_for(k, n_words),
                    microphone=mic, media_ref=f"mel/{spk}/{mic}/{k:03d}.mel", instance=f"s1-{k:03d}"))
    return out


def synthetic_corpus(speakers=tuple(sorted(TORGO_DYSARTHRIC)), per_speaker=40, n_words=10):
    return [UtteranceRecord(
        utterance_id=f"syn-{spk}-{k:04d}", speaker=spk, prompt=prompt_for(k + 3, n_words), microphone="head",
        media_ref=f"syn/{spk}/{k:04d}.mel", origin="synthetic", generator={"model": "ASp", "betaT": 10.0, "seed": k})
        for spk in speakers for k in range(per_speaker)]
