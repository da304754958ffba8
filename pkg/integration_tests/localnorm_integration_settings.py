import os

mnist_dir = os.environ.get('LOCALNORM_MNIST_DIR')
cifar10_dir = os.environ.get('LOCALNORM_CIFAR10_DIR')
test_threads = int(os.environ.get('LOCALNORM_TEST_THREADS', 1))

# desk-scale recipe: 10k training images, batch 100, K=10, 5 epochs
desk_config = {
    'dataset': {'kind': 'mnist', 'path': mnist_dir, 'train_count': 10000},
    'norm': {'variant': 'local', 'groups': 10},
    'training': {'epochs': 5, 'batch_size': 100, 'lr': 0.01,
                 'momentum': 0.9},
    'evaluation': {'single_max_images': 1000},
    'threads': test_threads,
    'seed': 0,
}

augmentation = {'family': 'agn', 'sigma_n': 1.0, 'fraction': 0.5}
