# Converts npm-packaged FMNIST (per-class JSON) and CIFAR-10 (PNG strips) into
# standard IDX / CIFAR binary files. Run once; outputs under /root/data.
import json, struct, numpy as np
from PIL import Image
src = '/tmp/npmp'
# FMNIST: per class first 6000 -> train, next 1000 -> test
tr_x, tr_y, te_x, te_y = [], [], [], []
for c in range(10):
    d = np.asarray([r for r in json.load(open(f'{src}/fashion-mnist-1.1.0/package/src/clothes/{c}.json'))['data'] if len(r) == 784], dtype=np.uint8)
    tr_x.append(d[:6000]); tr_y += [c]*6000
    te_x.append(d[6000:7000]); te_y += [c]*1000
def interleave(xs, ys, seed):
    x = np.concatenate(xs); y = np.asarray(ys, dtype=np.uint8)
    p = np.random.RandomState(seed).permutation(len(y))
    return x[p], y[p]
def write_idx(prefix, x, y):
    with open(prefix + '-images-idx3-ubyte', 'wb') as f:
        f.write(struct.pack('>IIII', 0x803, len(y), 28, 28)); f.write(x.tobytes())
    with open(prefix + '-labels-idx1-ubyte', 'wb') as f:
        f.write(struct.pack('>II', 0x801, len(y))); f.write(y.tobytes())
x, y = interleave(tr_x, tr_y, 0); write_idx('/root/data/fmnist/train', x, y)
x, y = interleave(te_x, te_y, 1); write_idx('/root/data/fmnist/t10k', x, y)
# CIFAR-10: each PNG row = one 32x32 RGB image, pixel-interleaved
tr_lab = json.load(open(f'{src}/tfc/package/train_lables.json'))
te_lab = json.load(open(f'{src}/tfc/package/test_lables.json'))
def write_cifar(png, labels, out):
    a = np.asarray(Image.open(png).convert('RGB'), dtype=np.uint8)  # (10000, 1024*3)
    a = a.reshape(len(labels), 1024, 3).transpose(0, 2, 1).reshape(len(labels), 3072)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], a], axis=1)
    rec.tofile(out)
for b in range(5):
    write_cifar(f'{src}/tfc/package/data_batch_{b+1}.png', tr_lab[b*10000:(b+1)*10000], f'/root/data/cifar10/data_batch_{b+1}.bin')
write_cifar(f'{src}/tfc/package/test_batch.png', te_lab, '/root/data/cifar10/test_batch.bin')
print('done')
