"""Frozen encoder wrappers producing fixed-width feature vectors.

Text runs through a 12-layer base uncased transformer encoder and is
pooled to the 768-dim hidden state of the leading [CLS] position. Images
run through a 16-layer convolutional network and are read off at the
4096-dim penultimate fully connected layer (post-activation, dropout
inert in eval mode). Both wrappers support two weight modes:

    pretrained  published weights fetched through the model hub
    random      seeded random initialization, fully offline

Random mode exists for smoke tests and air-gapped runs: the geometry,
determinism and file contract are identical, only the weights differ.
Heavy third-party imports happen lazily inside the constructors so that
argument errors and --help stay fast.
"""

import logging

import numpy as np

log = logging.getLogger(__name__)

_CLS_ID = 101
_SEP_ID = 102
_PAD_ID = 0
_BYTE_OFFSET = 2  # raw byte b maps to id b + 2, keeping 0/101/102 reserved

TEXT_DIM = 768
IMAGE_DIM = 4096


class TextEncoder:
    dim = TEXT_DIM

    def __init__(self, mode="pretrained", seed=0, max_length=128):
        import torch
        from transformers import BertConfig, BertModel

        if max_length < 2:
            raise ValueError("max_length must leave room for [CLS] and [SEP]")
        self.mode = mode
        self.max_length = max_length
        self._torch = torch
        if mode == "pretrained":
            from transformers import BertTokenizer
            self._tokenizer = BertTokenizer.from_pretrained("bert-base-uncased")
            self._model = BertModel.from_pretrained("bert-base-uncased")
        elif mode == "random":
            # default config is the base geometry: 12 layers, 768 hidden
            torch.manual_seed(seed)
            self._tokenizer = None
            self._model = BertModel(BertConfig())
        else:
            raise ValueError(f"unknown text encoder mode {mode!r}")
        self._model.eval()

    def tokenize(self, text):
        """Text -> id list, [CLS]/[SEP] included. May raise on bad input."""
        if self._tokenizer is not None:
            return self._tokenizer(
                text, truncation=True, max_length=self.max_length)["input_ids"]
        # random mode: byte-level stand-in, one id per utf-8 byte
        body = text.encode("utf-8")[: self.max_length - 2]
        return [_CLS_ID] + [b + _BYTE_OFFSET for b in body] + [_SEP_ID]

    def encode(self, token_id_lists):
        """Batch of id lists -> (n, 768) array of [CLS] hidden states."""
        torch = self._torch
        if not token_id_lists:
            return np.zeros((0, self.dim), dtype=np.float32)
        width = max(len(ids) for ids in token_id_lists)
        input_ids = torch.full((len(token_id_lists), width), _PAD_ID,
                               dtype=torch.long)
        mask = torch.zeros((len(token_id_lists), width), dtype=torch.long)
        for i, ids in enumerate(token_id_lists):
            input_ids[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            mask[i, : len(ids)] = 1
        with torch.no_grad():
            out = self._model(input_ids=input_ids, attention_mask=mask)
        cls = out.last_hidden_state[:, 0, :]
        return cls.numpy().astype(np.float32)


class ImageEncoder:
    dim = IMAGE_DIM

    def __init__(self, mode="pretrained", seed=0):
        import torch
        from torchvision import models, transforms

        self.mode = mode
        self._torch = torch
        if mode == "pretrained":
            weights = models.VGG16_Weights.IMAGENET1K_V1
            self._model = models.vgg16(weights=weights)
        elif mode == "random":
            torch.manual_seed(seed)
            self._model = models.vgg16(weights=None)
        else:
            raise ValueError(f"unknown image encoder mode {mode!r}")
        self._model.eval()
        # fc7 readout: everything in the classifier head except the logits
        self._head = self._model.classifier[:-1]
        self._preprocess = transforms.Compose([
            transforms.Resize(256),
            transforms.CenterCrop(224),
            transforms.ToTensor(),
            transforms.Normalize(mean=[0.485, 0.456, 0.406],
                                 std=[0.229, 0.224, 0.225]),
        ])

    def load(self, path):
        """Decode one image file to a preprocessed tensor. May raise."""
        from PIL import Image

        with Image.open(path) as img:
            return self._preprocess(img.convert("RGB"))

    def encode(self, tensors):
        """Batch of preprocessed tensors -> (n, 4096) fc7 activations."""
        torch = self._torch
        if not tensors:
            return np.zeros((0, self.dim), dtype=np.float32)
        batch = torch.stack(tensors, dim=0)
        with torch.no_grad():
            x = self._model.features(batch)
            x = self._model.avgpool(x)
            x = torch.flatten(x, 1)
            x = self._head(x)
        return x.numpy().astype(np.float32)
